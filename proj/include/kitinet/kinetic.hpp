#pragma once

// Collision-based residual operator. A feature vector x and its residual v
// are reinterpreted as N = D / n_divide particles in n_divide-dimensional
// space; one round of stochastic pair collisions redistributes the
// velocities, then positions advance by a straight-line step x + dt * v.
// With coll_coef = 0 no pair is ever accepted and the operator reduces
// exactly to the plain residual connection.
//
// All operations are pure functions of (inputs, explicit RNG state) and are
// safe to call concurrently on disjoint data. Cost of one training-mode
// forward is O(N^2 * n_divide) = O(D * N).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "kitinet/mat.hpp"
#include "kitinet/rng.hpp"

namespace kitinet {

struct NonDivisibleDimension : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct NonFiniteInput : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct StaleReport : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct KitiConfig {
  double dt = 1.0;
  std::size_t n_divide = 1;
  double coll_coef = 0.0;  // 0 disables collisions, 1 accepts almost everything
  std::uint64_t seed = 1;
  bool update_positions = true;  // collision-averaged position arm of the update
  bool training = true;          // false -> plain x + dt*v, no report

  void validate() const {
    if (!(dt > 0.0)) throw std::invalid_argument("KitiConfig: dt must be > 0");
    if (n_divide < 1) throw std::invalid_argument("KitiConfig: n_divide must be >= 1");
    if (!(coll_coef >= 0.0 && coll_coef <= 1.0))
      throw std::invalid_argument("KitiConfig: coll_coef must lie in [0, 1]");
  }
};

// N particles in n_divide-dimensional space: N rows of dimension n_divide,
// the row-major reshape of the flat feature vector.
struct ParticleBatch {
  Mat positions;   // N x n_divide
  Mat velocities;  // N x n_divide

  std::size_t count() const { return positions.rows; }
  std::size_t dim() const { return positions.cols; }
};

// Relative and center-of-mass quantities for every ordered pair.
// x_r, v_r are symmetric with zero diagonal; x_cm, v_cm are symmetric
// vector fields with x_cm[i][i] = x_i.
struct PairwiseKinematics {
  Mat x_r;  // N x N relative distances
  Mat v_r;  // N x N relative speeds
  PairTensor x_cm;
  PairTensor v_cm;

  std::size_t count() const { return x_r.rows; }
};

// Frozen record of one training-mode forward: everything the backward pass
// needs to replay the collision structure as a constant.
struct CollisionReport {
  BoolMat accepted;       // symmetric, false diagonal
  PairTensor directions;  // unit vectors, directions[j][i] = -directions[i][j]
  PairTensor delta_v;     // per ordered pair velocity change
  std::vector<int> counts;  // accepted collisions per particle
  double v_r_max = 0.0;

  std::size_t count() const { return accepted.n; }
  std::size_t dim() const { return directions.dim; }
};

namespace detail {

inline void check_finite(std::span<const double> x, const char* name) {
  for (double e : x)
    if (!std::isfinite(e)) throw NonFiniteInput(std::string(name) + " contains a non-finite entry");
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t c = 0; c < a.size(); ++c) s += a[c] * b[c];
  return s;
}

}  // namespace detail

inline ParticleBatch reshape_to_particles(std::span<const double> x,
                                          std::span<const double> v,
                                          std::size_t n_divide) {
  if (n_divide < 1) throw NonDivisibleDimension("n_divide must be >= 1");
  if (x.size() != v.size())
    throw NonDivisibleDimension("x and v must have the same length");
  if (x.empty() || x.size() % n_divide != 0)
    throw NonDivisibleDimension("feature length " + std::to_string(x.size()) +
                                " is not divisible by n_divide " + std::to_string(n_divide));
  detail::check_finite(x, "x");
  detail::check_finite(v, "v");

  const std::size_t n = x.size() / n_divide;
  ParticleBatch b{Mat(n, n_divide), Mat(n, n_divide)};
  std::copy(x.begin(), x.end(), b.positions.d.begin());
  std::copy(v.begin(), v.end(), b.velocities.d.begin());
  return b;
}

inline PairwiseKinematics pairwise_kinematics(const ParticleBatch& batch) {
  const std::size_t n = batch.count();
  const std::size_t dim = batch.dim();
  PairwiseKinematics k{Mat(n, n), Mat(n, n), PairTensor(n, dim), PairTensor(n, dim)};

  for (std::size_t i = 0; i < n; ++i) {
    const auto xi = batch.positions.row(i);
    const auto vi = batch.velocities.row(i);
    for (std::size_t j = i; j < n; ++j) {
      const auto xj = batch.positions.row(j);
      const auto vj = batch.velocities.row(j);
      double dx2 = 0.0, dv2 = 0.0;
      auto xcm = k.x_cm.at(i, j);
      auto vcm = k.v_cm.at(i, j);
      for (std::size_t c = 0; c < dim; ++c) {
        const double ddx = xi[c] - xj[c];
        const double ddv = vi[c] - vj[c];
        dx2 += ddx * ddx;
        dv2 += ddv * ddv;
        xcm[c] = 0.5 * (xi[c] + xj[c]);
        vcm[c] = 0.5 * (vi[c] + vj[c]);
      }
      const double xr = std::sqrt(dx2);
      const double vr = std::sqrt(dv2);
      k.x_r(i, j) = xr;
      k.x_r(j, i) = xr;
      k.v_r(i, j) = vr;
      k.v_r(j, i) = vr;
      if (j != i) {
        auto xcm_m = k.x_cm.at(j, i);
        auto vcm_m = k.v_cm.at(j, i);
        for (std::size_t c = 0; c < dim; ++c) {
          xcm_m[c] = xcm[c];
          vcm_m[c] = vcm[c];
        }
      }
    }
  }
  return k;
}

// Uniform unit vectors on the (dim-1)-sphere for every unordered pair,
// mirrored antisymmetrically. Normalized isotropic Gaussian draws; in one
// dimension this degenerates to a fair sign flip.
inline PairTensor sample_scatter_directions(std::size_t n, std::size_t dim, Rng& rng) {
  PairTensor dirs(n, dim);
  std::vector<double> g(dim);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double norm2 = 0.0;
      do {
        norm2 = 0.0;
        for (std::size_t c = 0; c < dim; ++c) {
          g[c] = rng.gaussian();
          norm2 += g[c] * g[c];
        }
      } while (norm2 < 1e-30);
      auto fwd = dirs.at(i, j);
      auto bwd = dirs.at(j, i);
      if (dim == 1) {  // 0-sphere: exact sign flip
        fwd[0] = g[0] >= 0.0 ? 1.0 : -1.0;
        bwd[0] = -fwd[0];
      } else {
        const double inv = 1.0 / std::sqrt(norm2);
        for (std::size_t c = 0; c < dim; ++c) {
          fwd[c] = g[c] * inv;
          bwd[c] = -fwd[c];
        }
      }
    }
  }
  return dirs;
}

// Acceptance rule: a pair collides iff v_r * exp(-x_r) / v_r_max exceeds
// 1 - coll_coef (strict). exp(-x_r) damps distant pairs; v_r_max is the
// largest relative speed over all pairs. All velocities equal means no
// relative motion and an empty mask.
inline std::pair<BoolMat, double> collision_mask(const PairwiseKinematics& kin,
                                                 double coll_coef) {
  if (!(coll_coef >= 0.0 && coll_coef <= 1.0))
    throw std::invalid_argument("coll_coef must lie in [0, 1]");
  const std::size_t n = kin.count();
  double v_r_max = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) v_r_max = std::max(v_r_max, kin.v_r(i, j));

  BoolMat accepted(n);
  if (v_r_max > 0.0) {
    const double threshold = 1.0 - coll_coef;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        const double lhs = kin.v_r(i, j) * std::exp(-kin.x_r(i, j)) / v_r_max;
        if (lhs > threshold) {
          accepted.set(i, j, true);
          accepted.set(j, i, true);
        }
      }
    }
  }
  return {std::move(accepted), v_r_max};
}

// Velocity change for every ordered pair:
//   delta_v[i][j] = v_cm[i][j] + 0.5 * v_r[i][j] * n[i][j] - v_i.
// Antisymmetry of the scatter directions makes delta_v[i][j] + delta_v[j][i]
// vanish, which is what conserves momentum under any mask.
inline PairTensor compute_delta_v(const PairwiseKinematics& kin,
                                  const PairTensor& directions,
                                  const ParticleBatch& batch) {
  const std::size_t n = batch.count();
  const std::size_t dim = batch.dim();
  if (directions.n != n || directions.dim != dim || kin.count() != n)
    throw StaleReport("compute_delta_v: shape mismatch");

  PairTensor dv(n, dim);
  for (std::size_t i = 0; i < n; ++i) {
    const auto vi = batch.velocities.row(i);
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;  // diagonal stays zero
      const auto vcm = kin.v_cm.at(i, j);
      const auto nij = directions.at(i, j);
      const double vr = kin.v_r(i, j);
      auto out = dv.at(i, j);
      for (std::size_t c = 0; c < dim; ++c)
        out[c] = vcm[c] + 0.5 * vr * nij[c] - vi[c];
    }
  }
  return dv;
}

// Applies the accepted velocity changes, optionally averages each particle
// position with its accepted collision midpoints, then takes the straight
// step x + dt * v'. With an empty mask this is exactly the plain residual
// update, bit for bit.
inline ParticleBatch apply_update(const ParticleBatch& batch, const CollisionReport& report,
                                  const PairwiseKinematics& kin, double dt,
                                  bool update_positions) {
  const std::size_t n = batch.count();
  const std::size_t dim = batch.dim();
  if (report.count() != n || report.dim() != dim || kin.count() != n)
    throw StaleReport("apply_update: report does not match batch shape");

  ParticleBatch out = batch;
  std::vector<double> acc(dim);
  for (std::size_t i = 0; i < n; ++i) {
    auto vi = out.velocities.row(i);
    int k = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!report.accepted.at(i, j)) continue;
      ++k;
      const auto dv = report.delta_v.at(i, j);
      for (std::size_t c = 0; c < dim; ++c) vi[c] += dv[c];
    }

    auto xi = out.positions.row(i);
    if (update_positions && k > 0) {
      for (std::size_t c = 0; c < dim; ++c) acc[c] = batch.positions(i, c);
      for (std::size_t j = 0; j < n; ++j) {
        if (!report.accepted.at(i, j)) continue;
        const auto xcm = kin.x_cm.at(i, j);
        for (std::size_t c = 0; c < dim; ++c) acc[c] += xcm[c];
      }
      const double inv = 1.0 / (1.0 + k);
      for (std::size_t c = 0; c < dim; ++c) xi[c] = acc[c] * inv;
    }
    for (std::size_t c = 0; c < dim; ++c) xi[c] += dt * vi[c];
  }
  return out;
}

inline std::vector<double> flatten(const Mat& m) { return m.d; }

struct ForwardOutput {
  std::vector<double> x_out;
  std::optional<CollisionReport> report;  // absent in inference mode
};

namespace detail {

// one full collision round on an already reshaped batch
inline std::pair<ParticleBatch, CollisionReport> collision_round(const ParticleBatch& batch,
                                                                 const KitiConfig& config,
                                                                 Rng& rng) {
  const PairwiseKinematics kin = pairwise_kinematics(batch);
  PairTensor dirs = sample_scatter_directions(batch.count(), batch.dim(), rng);
  PairTensor dv = compute_delta_v(kin, dirs, batch);
  auto [accepted, v_r_max] = collision_mask(kin, config.coll_coef);

  std::vector<int> counts(batch.count(), 0);
  for (std::size_t i = 0; i < batch.count(); ++i)
    for (std::size_t j = 0; j < batch.count(); ++j)
      if (accepted.at(i, j)) ++counts[i];

  CollisionReport report{std::move(accepted), std::move(dirs), std::move(dv),
                         std::move(counts), v_r_max};
  ParticleBatch updated = apply_update(batch, report, kin, config.dt, config.update_positions);
  return {std::move(updated), std::move(report)};
}

}  // namespace detail

inline ForwardOutput kitinet_forward(std::span<const double> x, std::span<const double> v,
                                     const KitiConfig& config, Rng& rng) {
  config.validate();
  if (!config.training) {
    if (x.size() != v.size() || x.empty() || x.size() % config.n_divide != 0)
      throw NonDivisibleDimension("feature length is not divisible by n_divide");
    detail::check_finite(x, "x");
    detail::check_finite(v, "v");
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + config.dt * v[i];
    return {std::move(out), std::nullopt};
  }

  const ParticleBatch batch = reshape_to_particles(x, v, config.n_divide);
  auto [updated, report] = detail::collision_round(batch, config, rng);
  return {flatten(updated.positions), std::move(report)};
}

namespace detail {

inline void check_report_shape(std::span<const double> x, std::span<const double> v,
                               const KitiConfig& config, const CollisionReport& report) {
  if (x.size() != v.size() || x.empty() || x.size() % config.n_divide != 0)
    throw StaleReport("report replay: bad input shape");
  const std::size_t n = x.size() / config.n_divide;
  if (report.count() != n || report.dim() != config.n_divide ||
      report.counts.size() != n)
    throw StaleReport("report shape does not match inputs");
}

}  // namespace detail

// Replays a recorded forward with the mask and scatter directions held
// fixed. This is the map kitinet_vjp differentiates, and the one the
// finite-difference oracle probes.
inline std::vector<double> kitinet_forward_frozen(std::span<const double> x,
                                                  std::span<const double> v,
                                                  const KitiConfig& config,
                                                  const CollisionReport& report) {
  config.validate();
  detail::check_report_shape(x, v, config, report);
  const ParticleBatch batch = reshape_to_particles(x, v, config.n_divide);
  const PairwiseKinematics kin = pairwise_kinematics(batch);
  PairTensor dv = compute_delta_v(kin, report.directions, batch);
  CollisionReport replay{report.accepted, report.directions, std::move(dv),
                         report.counts, report.v_r_max};
  const ParticleBatch updated =
      apply_update(batch, replay, kin, config.dt, config.update_positions);
  return flatten(updated.positions);
}

struct VjpResult {
  std::vector<double> grad_x;
  std::vector<double> grad_v;
  // set when an accepted pair had v_r < 1e-12; the norm gradient is taken
  // as zero there
  bool non_differentiable = false;
};

// Vector-Jacobian product of the frozen-randomness forward map. The mask
// and scatter directions are constants of the recorded forward; gradients
// flow through the center-of-mass terms (linear) and the relative speed
// (Euclidean norm).
inline VjpResult kitinet_vjp(std::span<const double> x, std::span<const double> v,
                             const KitiConfig& config, const CollisionReport& report,
                             std::span<const double> upstream) {
  config.validate();
  detail::check_report_shape(x, v, config, report);
  if (upstream.size() != x.size())
    throw StaleReport("upstream gradient length does not match inputs");

  const std::size_t dim = config.n_divide;
  const std::size_t n = x.size() / dim;
  const ParticleBatch batch = reshape_to_particles(x, v, dim);

  VjpResult res{std::vector<double>(x.size(), 0.0), std::vector<double>(x.size(), 0.0), false};
  std::vector<double> u(dim);

  for (std::size_t i = 0; i < n; ++i) {
    const std::span<const double> h = upstream.subspan(i * dim, dim);
    const int k = report.counts[i];

    // position path: x*_i averages x_i (weight 1 + k/2) with the accepted
    // midpoints (weight 1/2 each), all scaled by 1/(1+k)
    std::span<double> gx_i{res.grad_x.data() + i * dim, dim};
    if (config.update_positions && k > 0) {
      const double inv = 1.0 / (1.0 + k);
      const double wself = (1.0 + 0.5 * k) * inv;
      for (std::size_t c = 0; c < dim; ++c) gx_i[c] += wself * h[c];
      for (std::size_t j = 0; j < n; ++j) {
        if (!report.accepted.at(i, j)) continue;
        std::span<double> gx_j{res.grad_x.data() + j * dim, dim};
        for (std::size_t c = 0; c < dim; ++c) gx_j[c] += 0.5 * inv * h[c];
      }
    } else {
      for (std::size_t c = 0; c < dim; ++c) gx_i[c] += h[c];
    }

    // velocity path: upstream of v'_i is dt * h
    std::span<double> gv_i{res.grad_v.data() + i * dim, dim};
    for (std::size_t c = 0; c < dim; ++c) gv_i[c] += config.dt * h[c];

    const auto vi = batch.velocities.row(i);
    for (std::size_t j = 0; j < n; ++j) {
      if (!report.accepted.at(i, j)) continue;
      const auto vj = batch.velocities.row(j);
      double r2 = 0.0;
      for (std::size_t c = 0; c < dim; ++c) {
        u[c] = vi[c] - vj[c];
        r2 += u[c] * u[c];
      }
      const double r = std::sqrt(r2);
      if (r < 1e-12) {
        res.non_differentiable = true;
        for (std::size_t c = 0; c < dim; ++c) u[c] = 0.0;
      } else {
        for (std::size_t c = 0; c < dim; ++c) u[c] /= r;
      }

      const auto nij = report.directions.at(i, j);
      std::span<double> gv_j{res.grad_v.data() + j * dim, dim};
      double s = 0.0;  // <dt*h, n_ij>
      for (std::size_t c = 0; c < dim; ++c) s += config.dt * h[c] * nij[c];
      for (std::size_t c = 0; c < dim; ++c) {
        const double w = config.dt * h[c];
        gv_i[c] += -0.5 * w + 0.5 * s * u[c];
        gv_j[c] += 0.5 * w - 0.5 * s * u[c];
      }
    }
  }
  return res;
}

struct AEditionOutput {
  std::vector<double> x_out;
  std::vector<double> v_out;  // post-collision velocity, input to the next layer
};

// Acceleration-carrying variant: the residual acts as an acceleration on a
// velocity state handed from layer to layer. A missing state (first layer)
// is drawn from an isotropic Gaussian. The collision simulation itself is
// the standard forward run at initial velocity v_state + dt * a.
inline AEditionOutput a_edition_forward(std::span<const double> x, std::span<const double> a,
                                        const std::optional<std::vector<double>>& v_state,
                                        const KitiConfig& config, Rng& rng,
                                        double initial_velocity_std = 1.0) {
  config.validate();
  if (x.size() != a.size() || x.empty() || x.size() % config.n_divide != 0)
    throw NonDivisibleDimension("feature length is not divisible by n_divide");
  detail::check_finite(x, "x");
  detail::check_finite(a, "a");

  std::vector<double> v0;
  if (v_state) {
    if (v_state->size() != x.size()) throw NonDivisibleDimension("v_state length mismatch");
    detail::check_finite(*v_state, "v_state");
    v0 = *v_state;
  } else {
    v0.resize(x.size());
    for (double& e : v0) e = initial_velocity_std * rng.gaussian();
  }
  std::vector<double> v_init(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) v_init[i] = v0[i] + config.dt * a[i];

  if (!config.training) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + config.dt * v_init[i];
    return {std::move(out), std::move(v_init)};
  }

  const ParticleBatch batch = reshape_to_particles(x, v_init, config.n_divide);
  auto [updated, report] = detail::collision_round(batch, config, rng);
  return {flatten(updated.positions), flatten(updated.velocities)};
}

}  // namespace kitinet
