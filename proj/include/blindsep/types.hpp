#pragma once

#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace blindsep {

using cxd = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using RMatrix = Eigen::MatrixXd;
using RVector = Eigen::VectorXd;

// Sources along rows, time along columns.
using SignalMatrix = Eigen::MatrixXcd;
// Sensors x sources.
using ChannelMatrix = Eigen::MatrixXcd;
// 0/1 per source-time cell, same layout as SignalMatrix.
using ActivationMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;
// One source's 0/1 state track.
using StateVector = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, 1>;

struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct parameter_error : error {
  using error::error;
};

struct dimension_error : error {
  using error::error;
};

struct numerical_error : error {
  using error::error;
};

struct model_mismatch_error : error {
  using error::error;
};

struct io_error : error {
  using error::error;
};

// Iterative solve hit its iteration cap; carries the last iterate so callers
// can inspect or reuse it.
struct convergence_error : error {
  CVector last_iterate;
  double kkt_residual = 0.0;
  convergence_error(const std::string& msg, CVector x, double resid)
      : error(msg), last_iterate(std::move(x)), kkt_residual(resid) {}
};

inline void check_param(bool ok, const std::string& msg) {
  if (!ok) throw parameter_error(msg);
}

inline void check_dims(bool ok, const std::string& msg) {
  if (!ok) throw dimension_error(msg);
}

}  // namespace blindsep
