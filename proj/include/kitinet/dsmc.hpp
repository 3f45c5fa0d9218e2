#pragma once

// Direct Simulation Monte Carlo for a hard-sphere dilute gas in units
// m = k_B = 1. Each step drifts particles in straight lines, applies the
// wall model, sorts particles into cells, and runs no-time-counter
// collision sampling inside each cell. Hard-sphere scattering conserves
// pair momentum and kinetic energy exactly.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "kitinet/mat.hpp"
#include "kitinet/rng.hpp"

namespace kitinet::dsmc {

inline constexpr double kPi = 3.14159265358979323846264338327950288;

struct InvalidConfig : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

enum class WallModel { specular, periodic };

struct DsmcConfig {
  std::size_t num_particles = 1000;
  double f_n = 1.0;       // physical molecules per simulated particle
  double diameter = 0.01;
  double tau = 0.01;      // time step
  std::vector<double> box = {1.0, 1.0, 1.0};            // extents, domain [0, L)
  std::vector<std::size_t> cells_per_axis = {5, 5, 5};
  WallModel wall_model = WallModel::periodic;
  int dimensionality = 3;
  std::uint64_t seed = 1;
  double initial_temperature = 1.0;

  void validate() const {
    if (dimensionality != 2 && dimensionality != 3)
      throw InvalidConfig("dimensionality must be 2 or 3");
    const auto dim = static_cast<std::size_t>(dimensionality);
    if (box.size() != dim || cells_per_axis.size() != dim)
      throw InvalidConfig("box and cells_per_axis must have one entry per axis");
    for (double l : box)
      if (!(l > 0.0)) throw InvalidConfig("box extents must be positive");
    for (std::size_t c : cells_per_axis)
      if (c < 1) throw InvalidConfig("cells_per_axis entries must be >= 1");
    if (num_particles < 1) throw InvalidConfig("num_particles must be >= 1");
    if (!(f_n > 0.0)) throw InvalidConfig("f_n must be positive");
    if (!(diameter > 0.0)) throw InvalidConfig("diameter must be positive");
    if (!(tau > 0.0)) throw InvalidConfig("tau must be positive");
    if (!(initial_temperature > 0.0)) throw InvalidConfig("initial_temperature must be positive");
  }

  std::size_t cell_count() const {
    std::size_t n = 1;
    for (std::size_t c : cells_per_axis) n *= c;
    return n;
  }

  double cell_volume() const {
    double v = 1.0;
    for (std::size_t a = 0; a < box.size(); ++a)
      v *= box[a] / static_cast<double>(cells_per_axis[a]);
    return v;
  }

  double min_cell_edge() const {
    double e = box[0] / static_cast<double>(cells_per_axis[0]);
    for (std::size_t a = 1; a < box.size(); ++a)
      e = std::min(e, box[a] / static_cast<double>(cells_per_axis[a]));
    return e;
  }

  // diameter should stay well below the cell edge; callers may warn otherwise
  bool diameter_resolved() const { return diameter < 0.1 * min_cell_edge(); }
};

struct GasState {
  Mat positions;   // N x dim
  Mat velocities;  // N x dim
  std::vector<int> cell_of;
  double time = 0.0;
  std::uint64_t step = 0;  // drives per-cell RNG stream derivation
  std::vector<double> candidate_remainders;  // per-cell fractional candidate carry
  std::vector<double> v_r_max_cell;          // per-cell running NTC maximum (0 = unset)
};

inline void assign_cells(GasState& state, const DsmcConfig& config) {
  const std::size_t dim = static_cast<std::size_t>(config.dimensionality);
  for (std::size_t p = 0; p < state.positions.rows; ++p) {
    int idx = 0;
    for (std::size_t a = 0; a < dim; ++a) {
      const double frac = state.positions(p, a) / config.box[a];
      auto c = static_cast<long long>(frac * static_cast<double>(config.cells_per_axis[a]));
      c = std::clamp<long long>(c, 0, static_cast<long long>(config.cells_per_axis[a]) - 1);
      idx = idx * static_cast<int>(config.cells_per_axis[a]) + static_cast<int>(c);
    }
    state.cell_of[p] = idx;
  }
}

// Uniform positions, Maxwell-Boltzmann velocities at the configured
// temperature (per-component Gaussian with variance T).
inline GasState init_gas(const DsmcConfig& config, Rng& rng) {
  config.validate();
  const std::size_t n = config.num_particles;
  const std::size_t dim = static_cast<std::size_t>(config.dimensionality);
  GasState state{Mat(n, dim), Mat(n, dim), std::vector<int>(n, 0), 0.0, 0,
                 std::vector<double>(config.cell_count(), 0.0),
                 std::vector<double>(config.cell_count(), 0.0)};
  const double sigma = std::sqrt(config.initial_temperature);
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t a = 0; a < dim; ++a)
      state.positions(p, a) = rng.uniform01() * config.box[a];
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t a = 0; a < dim; ++a)
      state.velocities(p, a) = sigma * rng.gaussian();
  assign_cells(state, config);
  return state;
}

// Straight-line drift, then the wall model: specular walls mirror the
// position back inside and flip the normal velocity component; periodic
// walls wrap the position and leave the velocity untouched.
inline void drift_and_walls(GasState& state, const DsmcConfig& config) {
  const std::size_t dim = static_cast<std::size_t>(config.dimensionality);
  for (std::size_t p = 0; p < state.positions.rows; ++p) {
    for (std::size_t a = 0; a < dim; ++a) {
      double x = state.positions(p, a) + config.tau * state.velocities(p, a);
      const double L = config.box[a];
      if (config.wall_model == WallModel::specular) {
        while (x < 0.0 || x > L) {
          if (x < 0.0) {
            x = -x;
            state.velocities(p, a) = -state.velocities(p, a);
          } else {
            x = 2.0 * L - x;
            state.velocities(p, a) = -state.velocities(p, a);
          }
        }
      } else {
        x -= L * std::floor(x / L);
      }
      state.positions(p, a) = x;
    }
  }
  assign_cells(state, config);
}

// No-time-counter estimate of candidate collision pairs for one cell and
// one step: N_c (N_c - 1) F_N pi d^2 v_r_max tau / (2 V_c), with the
// fractional part carried between steps so the long-run mean matches the
// real-valued formula exactly.
inline std::pair<long long, double> candidate_count(long long n_c, double v_r_max_cell,
                                                    const DsmcConfig& config,
                                                    double remainder) {
  double m_real = 0.0;
  if (n_c > 1 && v_r_max_cell > 0.0) {
    m_real = static_cast<double>(n_c) * static_cast<double>(n_c - 1) * config.f_n * kPi *
             config.diameter * config.diameter * v_r_max_cell * config.tau /
             (2.0 * config.cell_volume());
  }
  const double total = m_real + remainder;
  const double fl = std::floor(total);
  return {static_cast<long long>(fl), total - fl};
}

// Isotropic post-collision direction: polar angles in 3-D, a single plane
// angle in 2-D.
inline void scatter_direction(int dimensionality, Rng& rng, double out[3]) {
  if (dimensionality == 3) {
    const double phi = kTwoPi * rng.uniform01();
    const double cos_theta = 2.0 * rng.uniform01() - 1.0;
    const double sin_theta = std::sqrt(std::max(0.0, 1.0 - cos_theta * cos_theta));
    out[0] = sin_theta * std::cos(phi);
    out[1] = sin_theta * std::sin(phi);
    out[2] = cos_theta;
  } else {
    const double alpha = kTwoPi * rng.uniform01();
    out[0] = std::cos(alpha);
    out[1] = std::sin(alpha);
    out[2] = 0.0;
  }
}

struct CellStats {
  long long candidates = 0;
  long long collisions = 0;
};

// One cell's collision phase. Samples candidate pairs with replacement,
// accepts with probability v_r / v_r_max, and scatters accepted pairs as
// hard spheres: unchanged relative speed, isotropic direction, positions
// untouched. The stored v_r_max is bumped (with 5% headroom) whenever a
// sampled pair exceeds it.
inline CellStats collide_cell(const std::vector<int>& cell_particles, GasState& state,
                              const DsmcConfig& config, int cell_index, Rng& rng) {
  CellStats stats;
  const auto n_c = static_cast<long long>(cell_particles.size());
  if (n_c < 2) return stats;

  const std::size_t dim = static_cast<std::size_t>(config.dimensionality);
  double& vmax = state.v_r_max_cell[cell_index];
  if (vmax <= 0.0) {
    double best = 0.0;
    for (std::size_t a = 0; a < cell_particles.size(); ++a) {
      for (std::size_t b = a + 1; b < cell_particles.size(); ++b) {
        double d2 = 0.0;
        for (std::size_t c = 0; c < dim; ++c) {
          const double dv = state.velocities(cell_particles[a], c) -
                            state.velocities(cell_particles[b], c);
          d2 += dv * dv;
        }
        best = std::max(best, d2);
      }
    }
    vmax = 1.05 * std::sqrt(best);
    if (vmax <= 0.0) return stats;  // no relative motion in this cell yet
  }

  auto [m_cand, rem] =
      candidate_count(n_c, vmax, config, state.candidate_remainders[cell_index]);
  state.candidate_remainders[cell_index] = rem;
  stats.candidates = m_cand;

  double nvec[3];
  for (long long t = 0; t < m_cand; ++t) {
    const int i = cell_particles[rng.uniform_below(cell_particles.size())];
    int j = i;
    while (j == i) j = cell_particles[rng.uniform_below(cell_particles.size())];

    double vr2 = 0.0;
    for (std::size_t c = 0; c < dim; ++c) {
      const double dv = state.velocities(i, c) - state.velocities(j, c);
      vr2 += dv * dv;
    }
    const double vr = std::sqrt(vr2);
    if (vr > vmax) vmax = 1.05 * vr;

    if (vr / vmax > rng.uniform01()) {
      scatter_direction(config.dimensionality, rng, nvec);
      for (std::size_t c = 0; c < dim; ++c) {
        const double vcm = 0.5 * (state.velocities(i, c) + state.velocities(j, c));
        const double post = 0.5 * vr * nvec[c];
        state.velocities(i, c) = vcm + post;
        state.velocities(j, c) = vcm - post;
      }
      ++stats.collisions;
    }
  }
  return stats;
}

struct StepStats {
  long long candidates = 0;
  long long collisions = 0;
};

// drift -> walls -> cell sort -> per-cell collisions; advances time by tau.
// Each cell draws from its own stream keyed by (seed, step, cell), so runs
// are reproducible regardless of cell iteration order.
inline StepStats dsmc_step(GasState& state, const DsmcConfig& config) {
  drift_and_walls(state, config);

  const std::size_t cells = config.cell_count();
  std::vector<std::vector<int>> members(cells);
  for (std::size_t p = 0; p < state.positions.rows; ++p)
    members[static_cast<std::size_t>(state.cell_of[p])].push_back(static_cast<int>(p));

  StepStats stats;
  const RngKey step_key = RngKey::root(config.seed).child(0xD5).child(state.step);
  for (std::size_t c = 0; c < cells; ++c) {
    if (members[c].size() < 2) continue;
    Rng rng(step_key.child(c));
    const CellStats cs = collide_cell(members[c], state, config, static_cast<int>(c), rng);
    stats.candidates += cs.candidates;
    stats.collisions += cs.collisions;
  }
  state.time += config.tau;
  state.step += 1;
  return stats;
}

// --- diagnostics -----------------------------------------------------------

inline std::vector<double> total_momentum(const GasState& state) {
  std::vector<double> p(state.velocities.cols, 0.0);
  for (std::size_t i = 0; i < state.velocities.rows; ++i)
    for (std::size_t c = 0; c < state.velocities.cols; ++c) p[c] += state.velocities(i, c);
  return p;
}

inline double kinetic_energy(const GasState& state) {
  double e = 0.0;
  for (double v : state.velocities.d) e += v * v;
  return 0.5 * e;
}

// temperature from peculiar velocities (mean flow removed), m = k_B = 1
inline double temperature(const GasState& state) {
  const std::size_t n = state.velocities.rows;
  const std::size_t dim = state.velocities.cols;
  std::vector<double> mean = total_momentum(state);
  for (double& m : mean) m /= static_cast<double>(n);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < dim; ++c) {
      const double d = state.velocities(i, c) - mean[c];
      sum += d * d;
    }
  return sum / static_cast<double>(n * dim);
}

struct Histogram {
  std::vector<double> edges;    // bins + 1 entries
  std::vector<double> density;  // normalized: sum(density * width) = 1
};

inline Histogram speed_histogram(const GasState& state, std::size_t bins) {
  if (bins < 10) throw std::invalid_argument("speed_histogram: bins must be >= 10");
  const std::size_t n = state.velocities.rows;
  const std::size_t dim = state.velocities.cols;
  std::vector<double> speeds(n);
  double smax = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double s2 = 0.0;
    for (std::size_t c = 0; c < dim; ++c) s2 += state.velocities(i, c) * state.velocities(i, c);
    speeds[i] = std::sqrt(s2);
    smax = std::max(smax, speeds[i]);
  }
  if (smax <= 0.0) smax = 1.0;

  Histogram h;
  h.edges.resize(bins + 1);
  for (std::size_t b = 0; b <= bins; ++b)
    h.edges[b] = smax * static_cast<double>(b) / static_cast<double>(bins);
  h.density.assign(bins, 0.0);
  const double w = smax / static_cast<double>(bins);
  for (double s : speeds) {
    auto b = static_cast<std::size_t>(s / w);
    if (b >= bins) b = bins - 1;
    h.density[b] += 1.0;
  }
  for (double& d : h.density) d /= static_cast<double>(n) * w;
  return h;
}

// Maxwell-Boltzmann speed density at the bin midpoints (m = k_B = 1):
//   2-D: f(s) = (s / T) exp(-s^2 / 2T)
//   3-D: f(s) = sqrt(2/pi) s^2 T^{-3/2} exp(-s^2 / 2T)
inline std::vector<double> maxwell_reference(double temperature, int dim,
                                             const std::vector<double>& bin_edges) {
  if (!(temperature > 0.0)) throw std::invalid_argument("maxwell_reference: temperature must be > 0");
  if (dim != 2 && dim != 3) throw std::invalid_argument("maxwell_reference: dim must be 2 or 3");
  std::vector<double> ref(bin_edges.size() - 1);
  for (std::size_t b = 0; b + 1 < bin_edges.size(); ++b) {
    const double s = 0.5 * (bin_edges[b] + bin_edges[b + 1]);
    const double g = std::exp(-s * s / (2.0 * temperature));
    if (dim == 2)
      ref[b] = s / temperature * g;
    else
      ref[b] = std::sqrt(2.0 / kPi) * s * s * std::pow(temperature, -1.5) * g;
  }
  return ref;
}

// L2 distance between a binned density and a reference sampled on the same
// bins: sqrt(sum (d - r)^2 * width)
inline double l2_distance(const Histogram& h, const std::vector<double>& reference) {
  double acc = 0.0;
  for (std::size_t b = 0; b < h.density.size(); ++b) {
    const double w = h.edges[b + 1] - h.edges[b];
    const double d = h.density[b] - reference[b];
    acc += d * d * w;
  }
  return std::sqrt(acc);
}

inline double l2_to_maxwell(const GasState& state, std::size_t bins) {
  const Histogram h = speed_histogram(state, bins);
  const double T = temperature(state);
  if (!(T > 0.0)) return 0.0;  // zero-velocity gas: nothing to compare
  const auto ref =
      maxwell_reference(T, static_cast<int>(state.velocities.cols), h.edges);
  return l2_distance(h, ref);
}

}  // namespace kitinet::dsmc
