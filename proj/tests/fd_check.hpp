#pragma once

// Test-only central finite-difference oracles. These probe the frozen
// collision replay and the tape replay directly, independent of the
// analytic gradient code they are checking.

#include <cmath>
#include <cstddef>
#include <vector>

#include "kitinet/kinetic.hpp"
#include "kitinet/net.hpp"

namespace fdcheck {

constexpr double kStep = 1e-6;

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

struct KineticFd {
  std::vector<double> grad_x;
  std::vector<double> grad_v;
};

// d/dx_k <upstream, F(x, v)> and d/dv_k, with mask and directions frozen
inline KineticFd kinetic_fd(const std::vector<double>& x, const std::vector<double>& v,
                            const kitinet::KitiConfig& cfg,
                            const kitinet::CollisionReport& report,
                            const std::vector<double>& upstream) {
  auto probe = [&](const std::vector<double>& xx, const std::vector<double>& vv) {
    return dot(upstream, kitinet::kitinet_forward_frozen(xx, vv, cfg, report));
  };
  KineticFd fd{std::vector<double>(x.size()), std::vector<double>(v.size())};
  for (std::size_t k = 0; k < x.size(); ++k) {
    auto xp = x, xm = x;
    xp[k] += kStep;
    xm[k] -= kStep;
    fd.grad_x[k] = (probe(xp, v) - probe(xm, v)) / (2.0 * kStep);
    auto vp = v, vm = v;
    vp[k] += kStep;
    vm[k] -= kStep;
    fd.grad_v[k] = (probe(x, vp) - probe(x, vm)) / (2.0 * kStep);
  }
  return fd;
}

inline double rel_error(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
}

// MSE loss of the network with collision structure replayed from `frozen`
inline double net_loss_frozen(const kitinet::net::ParameterSet& params,
                              const kitinet::net::NetworkSpec& spec,
                              const kitinet::net::Dataset& data,
                              const kitinet::net::FrozenReports& frozen) {
  auto fr = kitinet::net::forward(params, spec, data.inputs, true,
                                  kitinet::RngKey::root(0), nullptr, &frozen);
  return kitinet::net::mse_loss(fr.outputs, data.targets).first;
}

// central differences over every parameter of the network
inline kitinet::net::Gradients net_fd(const kitinet::net::ParameterSet& params,
                                      const kitinet::net::NetworkSpec& spec,
                                      const kitinet::net::Dataset& data,
                                      const kitinet::net::FrozenReports& frozen) {
  auto grads = kitinet::net::zero_like(params);
  auto work = params;
  for (std::size_t l = 0; l < params.size(); ++l) {
    for (std::size_t i = 0; i < params[l].W.d.size(); ++i) {
      work[l].W.d[i] = params[l].W.d[i] + kStep;
      const double up = net_loss_frozen(work, spec, data, frozen);
      work[l].W.d[i] = params[l].W.d[i] - kStep;
      const double dn = net_loss_frozen(work, spec, data, frozen);
      work[l].W.d[i] = params[l].W.d[i];
      grads[l].W.d[i] = (up - dn) / (2.0 * kStep);
    }
    for (std::size_t i = 0; i < params[l].b.size(); ++i) {
      work[l].b[i] = params[l].b[i] + kStep;
      const double up = net_loss_frozen(work, spec, data, frozen);
      work[l].b[i] = params[l].b[i] - kStep;
      const double dn = net_loss_frozen(work, spec, data, frozen);
      work[l].b[i] = params[l].b[i];
      grads[l].b[i] = (up - dn) / (2.0 * kStep);
    }
  }
  return grads;
}

inline double net_grad_rel_error(const kitinet::net::Gradients& analytic,
                                 const kitinet::net::Gradients& fd) {
  double num = 0.0, den = 0.0;
  for (std::size_t l = 0; l < analytic.size(); ++l) {
    for (std::size_t i = 0; i < analytic[l].W.d.size(); ++i) {
      const double d = analytic[l].W.d[i] - fd[l].W.d[i];
      num += d * d;
      den += fd[l].W.d[i] * fd[l].W.d[i];
    }
    for (std::size_t i = 0; i < analytic[l].b.size(); ++i) {
      const double d = analytic[l].b[i] - fd[l].b[i];
      num += d * d;
      den += fd[l].b[i] * fd[l].b[i];
    }
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
}

inline kitinet::net::FrozenReports extract_reports(const kitinet::net::Tape& tape) {
  kitinet::net::FrozenReports out(tape.layers.size());
  for (std::size_t l = 0; l < tape.layers.size(); ++l) out[l] = tape.layers[l].reports;
  return out;
}

}  // namespace fdcheck
