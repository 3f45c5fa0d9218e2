#pragma once

// Implementations behind the CLI subcommands. Each run owns one output
// directory holding config.echo.json, the primary CSVs, and a MANIFEST of
// content hashes; reruns with the same materialized config are
// byte-identical.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "kitinet/condense.hpp"
#include "kitinet/config.hpp"
#include "kitinet/csv.hpp"
#include "kitinet/dsmc.hpp"
#include "kitinet/kinetic.hpp"
#include "kitinet/net.hpp"

namespace kitinet::cli {

namespace fs = std::filesystem;

// Collects files for one run directory and finalizes the MANIFEST
// (sorted "fnv1a64-hex  filename" lines).
class RunDir {
 public:
  explicit RunDir(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

  void write(const std::string& name, const std::string& content) {
    write_text_file(dir_ / name, content);
    hashes_[name] = fnv1a64(content);
  }

  void finalize() const {
    std::string manifest;
    for (const auto& [name, hash] : hashes_) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash));
      manifest += std::string(buf) + "  " + name + "\n";
    }
    write_text_file(dir_ / "MANIFEST", manifest);
  }

  const fs::path& path() const { return dir_; }

 private:
  fs::path dir_;
  std::map<std::string, std::uint64_t> hashes_;  // ordered -> deterministic manifest
};

// Debug dump of one collision record: accepted pairs with their scatter
// directions and velocity changes.
inline json report_to_json(const CollisionReport& report) {
  json doc;
  doc["particles"] = report.count();
  doc["dim"] = report.dim();
  doc["v_r_max"] = report.v_r_max;
  doc["counts"] = report.counts;
  doc["rng_family"] = std::string(kRngFamily);
  json pairs = json::array();
  for (std::size_t i = 0; i < report.count(); ++i) {
    for (std::size_t j = i + 1; j < report.count(); ++j) {
      if (!report.accepted.at(i, j)) continue;
      json p;
      p["i"] = i;
      p["j"] = j;
      const auto d = report.directions.at(i, j);
      const auto dv = report.delta_v.at(i, j);
      p["direction"] = std::vector<double>(d.begin(), d.end());
      p["delta_v"] = std::vector<double>(dv.begin(), dv.end());
      pairs.push_back(std::move(p));
    }
  }
  doc["accepted_pairs"] = std::move(pairs);
  return doc;
}

namespace detail {

struct CheckRow {
  std::string name;
  double metric = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

inline std::vector<double> random_vector(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (double& e : v) e = rng.gaussian();
  return v;
}

// directional derivative of the frozen forward along upstream, by central
// differences; used to cross-check the analytic VJP
inline double vjp_fd_max_rel_error(const KitiConfig& cfg, std::size_t d, Rng& rng) {
  const auto x = random_vector(d, rng);
  const auto v = random_vector(d, rng);
  Rng fwd_rng(cfg.seed);
  const auto fwd = kitinet_forward(x, v, cfg, fwd_rng);
  const auto upstream = random_vector(d, rng);
  const auto an = kitinet_vjp(x, v, cfg, *fwd.report, upstream);

  const double eps = 1e-6;
  auto probe = [&](const std::vector<double>& xx, const std::vector<double>& vv) {
    const auto out = kitinet_forward_frozen(xx, vv, cfg, *fwd.report);
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += upstream[i] * out[i];
    return s;
  };

  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    auto xp = x, xm = x;
    xp[k] += eps;
    xm[k] -= eps;
    const double fd = (probe(xp, v) - probe(xm, v)) / (2.0 * eps);
    num += (an.grad_x[k] - fd) * (an.grad_x[k] - fd);
    den += fd * fd;
    auto vp = v, vm = v;
    vp[k] += eps;
    vm[k] -= eps;
    const double fdv = (probe(x, vp) - probe(x, vm)) / (2.0 * eps);
    num += (an.grad_v[k] - fdv) * (an.grad_v[k] - fdv);
    den += fdv * fdv;
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
}

inline std::vector<CheckRow> kernel_check_suite(const KitiConfig& base) {
  std::vector<CheckRow> rows;
  const std::size_t d = base.n_divide * 8;

  {  // reduction: coll_coef = 0 training pass equals x + dt*v and inference, bitwise
    KitiConfig cfg = base;
    cfg.coll_coef = 0.0;
    cfg.training = true;
    Rng gen(RngKey::root(base.seed).child(11));
    double metric = 0.0;
    for (int t = 0; t < 200; ++t) {
      const auto x = random_vector(d, gen);
      const auto v = random_vector(d, gen);
      Rng r1(cfg.seed + t), r2(cfg.seed + t);
      const auto train_out = kitinet_forward(x, v, cfg, r1);
      KitiConfig inf = cfg;
      inf.training = false;
      const auto inf_out = kitinet_forward(x, v, inf, r2);
      for (std::size_t i = 0; i < d; ++i) {
        metric = std::max(metric, std::abs(train_out.x_out[i] - (x[i] + cfg.dt * v[i])));
        metric = std::max(metric, std::abs(train_out.x_out[i] - inf_out.x_out[i]));
      }
    }
    rows.push_back({"reduction_coll_coef_zero", metric, 0.0, metric == 0.0});
  }

  {  // momentum conservation under the full pipeline
    double metric = 0.0;
    Rng gen(RngKey::root(base.seed).child(12));
    for (double cc : {0.3, 0.6, 0.9, base.coll_coef}) {
      KitiConfig cfg = base;
      cfg.coll_coef = cc;
      cfg.training = true;
      for (int t = 0; t < 50; ++t) {
        const auto x = random_vector(d, gen);
        const auto v = random_vector(d, gen);
        const auto batch = reshape_to_particles(x, v, cfg.n_divide);
        const auto kin = pairwise_kinematics(batch);
        Rng cr(cfg.seed + t);
        auto dirs = sample_scatter_directions(batch.count(), batch.dim(), cr);
        auto dv = compute_delta_v(kin, dirs, batch);
        auto [mask, vmax] = collision_mask(kin, cfg.coll_coef);
        std::vector<int> counts(batch.count(), 0);
        for (std::size_t i = 0; i < batch.count(); ++i)
          for (std::size_t j = 0; j < batch.count(); ++j)
            if (mask.at(i, j)) ++counts[i];
        CollisionReport rep{std::move(mask), std::move(dirs), std::move(dv),
                            std::move(counts), vmax};
        const auto updated = apply_update(batch, rep, kin, cfg.dt, cfg.update_positions);
        double scale = 0.0, drift = 0.0;
        for (std::size_t c = 0; c < batch.dim(); ++c) {
          double before = 0.0, after = 0.0;
          for (std::size_t i = 0; i < batch.count(); ++i) {
            before += batch.velocities(i, c);
            after += updated.velocities(i, c);
            scale += std::abs(batch.velocities(i, c));
          }
          drift += (after - before) * (after - before);
        }
        metric = std::max(metric, std::sqrt(drift) / std::max(scale, 1e-30));
      }
    }
    rows.push_back({"momentum_conservation", metric, 1e-10, false});
    rows.back().pass = rows.back().metric <= rows.back().tolerance;
  }

  {  // pairwise energy conservation when the mask is a matching
    double metric = 0.0;
    Rng gen(RngKey::root(base.seed).child(13));
    for (int t = 0; t < 100; ++t) {
      const auto x = random_vector(d, gen);
      const auto v = random_vector(d, gen);
      const auto batch = reshape_to_particles(x, v, base.n_divide);
      const std::size_t n = batch.count();
      const auto kin = pairwise_kinematics(batch);
      Rng cr(base.seed + t);
      auto dirs = sample_scatter_directions(n, batch.dim(), cr);
      auto dv = compute_delta_v(kin, dirs, batch);
      BoolMat mask(n);
      std::vector<int> counts(n, 0);
      for (std::size_t i = 0; i + 1 < n; i += 2) {
        mask.set(i, i + 1, true);
        mask.set(i + 1, i, true);
        counts[i] = counts[i + 1] = 1;
      }
      CollisionReport rep{std::move(mask), std::move(dirs), std::move(dv),
                          std::move(counts), 1.0};
      const auto updated = apply_update(batch, rep, kin, base.dt, base.update_positions);
      for (std::size_t i = 0; i + 1 < n; i += 2) {
        double before = 0.0, after = 0.0;
        for (std::size_t c = 0; c < batch.dim(); ++c) {
          before += batch.velocities(i, c) * batch.velocities(i, c) +
                    batch.velocities(i + 1, c) * batch.velocities(i + 1, c);
          after += updated.velocities(i, c) * updated.velocities(i, c) +
                   updated.velocities(i + 1, c) * updated.velocities(i + 1, c);
        }
        metric = std::max(metric, std::abs(after - before) / std::max(before, 1e-30));
      }
    }
    rows.push_back({"matching_energy_conservation", metric, 1e-10, false});
    rows.back().pass = rows.back().metric <= rows.back().tolerance;
  }

  {  // analytic VJP against central finite differences, frozen collisions
    KitiConfig cfg = base;
    cfg.training = true;
    if (cfg.coll_coef == 0.0) cfg.coll_coef = 0.5;  // exercise a nonempty mask
    Rng gen(RngKey::root(base.seed).child(14));
    double metric = 0.0;
    for (int t = 0; t < 25; ++t) metric = std::max(metric, vjp_fd_max_rel_error(cfg, d, gen));
    rows.push_back({"gradient_vs_finite_difference", metric, 1e-5, false});
    rows.back().pass = rows.back().metric <= rows.back().tolerance;
  }

  return rows;
}

}  // namespace detail

inline int run_kernel_check(const ExperimentConfig& cfg, bool quiet = false) {
  RunDir out(cfg.output_dir);
  out.write("config.echo.json", to_json(cfg).dump(2) + "\n");

  const auto rows = detail::kernel_check_suite(cfg.kiti);
  std::string csv = "check_name,metric,tolerance,pass\n";
  const detail::CheckRow* first_fail = nullptr;
  for (const auto& r : rows) {
    csv += csv_row({r.name, format_double(r.metric), format_double(r.tolerance),
                    r.pass ? "true" : "false"});
    if (!r.pass && !first_fail) first_fail = &r;
    if (!quiet)
      std::cout << (r.pass ? "[PASS] " : "[FAIL] ") << r.name << " metric=" << r.metric
                << " tol=" << r.tolerance << "\n";
  }
  out.write("checks.csv", csv);

  {  // sample collision record for debugging
    KitiConfig sample = cfg.kiti;
    sample.training = true;
    Rng gen(RngKey::root(cfg.kiti.seed).child(15));
    const auto x = detail::random_vector(cfg.kiti.n_divide * 8, gen);
    const auto v = detail::random_vector(cfg.kiti.n_divide * 8, gen);
    Rng fwd_rng(sample.seed);
    const auto fwd = kitinet_forward(x, v, sample, fwd_rng);
    out.write("report.json", report_to_json(*fwd.report).dump(2) + "\n");
  }
  out.finalize();

  if (first_fail) {
    std::cerr << "kernel-check failed: " << first_fail->name << " metric "
              << first_fail->metric << " exceeds tolerance " << first_fail->tolerance << "\n";
    return 1;
  }
  return 0;
}

inline int run_dsmc(const ExperimentConfig& cfg, bool quiet = false) {
  RunDir out(cfg.output_dir);
  out.write("config.echo.json", to_json(cfg).dump(2) + "\n");

  const auto& rc = cfg.dsmc_run;
  if (!rc.gas.diameter_resolved() && !quiet)
    std::cerr << "warning: particle diameter is not small relative to the cell edge\n";

  Rng init_rng(RngKey::root(rc.gas.seed).child(7));
  dsmc::GasState state = dsmc::init_gas(rc.gas, init_rng);

  const std::size_t dim = static_cast<std::size_t>(rc.gas.dimensionality);
  std::string ts = "step,time";
  for (std::size_t c = 0; c < dim; ++c)
    ts += std::string(",total_momentum_") + static_cast<char>('x' + c);
  ts += ",kinetic_energy,temperature,l2_to_maxwell\n";

  for (std::size_t s = 1; s <= rc.steps; ++s) {
    dsmc::dsmc_step(state, rc.gas);
    std::vector<std::string> row{std::to_string(s), format_double(state.time)};
    for (double p : dsmc::total_momentum(state)) row.push_back(format_double(p));
    row.push_back(format_double(dsmc::kinetic_energy(state)));
    row.push_back(format_double(dsmc::temperature(state)));
    row.push_back(format_double(dsmc::l2_to_maxwell(state, rc.hist_bins)));
    ts += csv_row(row);
  }
  out.write("timeseries.csv", ts);

  const auto hist = dsmc::speed_histogram(state, rc.hist_bins);
  const double T = dsmc::temperature(state);
  const auto ref = dsmc::maxwell_reference(T > 0.0 ? T : rc.gas.initial_temperature,
                                           rc.gas.dimensionality, hist.edges);
  std::string hcsv = "bin_lo,bin_hi,density,reference_density\n";
  for (std::size_t b = 0; b < hist.density.size(); ++b)
    hcsv += csv_row({format_double(hist.edges[b]), format_double(hist.edges[b + 1]),
                     format_double(hist.density[b]), format_double(ref[b])});
  out.write("histogram.csv", hcsv);
  out.finalize();

  if (!quiet)
    std::cout << "dsmc: " << rc.steps << " steps, " << rc.gas.num_particles
              << " particles -> " << out.path().string() << "\n";
  return 0;
}

namespace detail {

inline std::string params_to_csv(const net::ParameterSet& params) {
  std::string out;
  for (std::size_t l = 0; l < params.size(); ++l) {
    const auto& p = params[l];
    out += "# layer=" + std::to_string(l + 1) + " type=weight rows=" +
           std::to_string(p.W.rows) + " cols=" + std::to_string(p.W.cols) + "\n";
    for (std::size_t r = 0; r < p.W.rows; ++r) {
      for (std::size_t c = 0; c < p.W.cols; ++c) {
        if (c) out += ',';
        out += format_double(p.W(r, c));
      }
      out += '\n';
    }
    out += "# layer=" + std::to_string(l + 1) + " type=bias rows=1 cols=" +
           std::to_string(p.b.size()) + "\n";
    for (std::size_t c = 0; c < p.b.size(); ++c) {
      if (c) out += ',';
      out += format_double(p.b[c]);
    }
    out += '\n';
  }
  return out;
}

}  // namespace detail

inline int run_train(const ExperimentConfig& cfg, bool quiet = false) {
  RunDir out(cfg.output_dir);
  out.write("config.echo.json", to_json(cfg).dump(2) + "\n");

  net::NetworkSpec spec = cfg.network;
  spec.kiti = cfg.kiti;
  Rng data_rng(RngKey::root(cfg.train.dataset_seed).child(2));
  const net::Dataset data = net::make_sine_dataset(cfg.train.dataset_n, data_rng);

  auto write_loss_csv = [&](const std::vector<double>& losses) {
    std::string csv = "epoch,train_mse\n";
    for (std::size_t e = 0; e < losses.size(); ++e)
      csv += csv_row({std::to_string(e + 1), format_double(losses[e])});
    out.write("loss.csv", csv);
  };

  net::TrainingRun run;
  try {
    run = net::train(spec, cfg.train.opt, data);
  } catch (const net::DivergenceDetected& e) {
    write_loss_csv(e.partial_losses);
    out.finalize();
    std::cerr << "train: " << e.what() << "\n";
    return 1;
  }
  write_loss_csv(run.losses);

  std::string scores = "epoch,layer,threshold,score\n";
  for (const auto& [epoch, params] : run.checkpoints) {
    out.write("params_epoch" + std::to_string(epoch) + ".csv", detail::params_to_csv(params));
    for (std::size_t layer : cfg.train.analyze_layers) {
      const auto cm = condense::cosine_matrix(params[layer - 1].W, static_cast<int>(layer),
                                              static_cast<int>(epoch));
      const double score = condense::condensation_score(cm, cfg.train.score_threshold);
      scores += csv_row({std::to_string(epoch), std::to_string(layer),
                         format_double(cfg.train.score_threshold), format_double(score)});
      out.write("heatmap_layer" + std::to_string(layer) + "_epoch" + std::to_string(epoch) +
                    ".csv",
                condense::export_heatmap(cm));
    }
  }
  out.write("scores.csv", scores);
  out.finalize();

  if (!quiet)
    std::cout << "train: " << cfg.train.opt.epochs << " epochs, final mse "
              << run.final_mse << " -> " << out.path().string() << "\n";
  return 0;
}

inline int run_sweep(const ExperimentConfig& cfg, bool quiet = false) {
  RunDir out(cfg.output_dir);
  out.write("config.echo.json", to_json(cfg).dump(2) + "\n");

  if (cfg.sweep.n_divide.empty() || cfg.sweep.coll_coef.empty() || cfg.sweep.seeds.empty())
    throw ConfigError("sweep grid must not be empty");

  // deduplicate grid points, warn about repeats
  std::set<std::pair<std::size_t, double>> grid;
  for (std::size_t nd : cfg.sweep.n_divide) {
    for (double cc : cfg.sweep.coll_coef) {
      if (!grid.insert({nd, cc}).second && !quiet)
        std::cerr << "warning: duplicate sweep point n_divide=" << nd << " coll_coef=" << cc
                  << " skipped\n";
    }
  }

  Rng data_rng(RngKey::root(cfg.train.dataset_seed).child(2));
  const net::Dataset shared_data = net::make_sine_dataset(cfg.train.dataset_n, data_rng);
  const std::size_t analyze_layer = cfg.train.analyze_layers.front();

  struct Row {
    std::size_t n_divide;
    double coll_coef;
    std::uint64_t seed;
    double mse;
    double score;
  };
  std::vector<Row> rows;

  for (const auto& [nd, cc] : grid) {
    if (cfg.network.hidden_dim % nd != 0) {
      if (!quiet)
        std::cerr << "skipping infeasible sweep point: n_divide=" << nd
                  << " does not divide hidden_dim=" << cfg.network.hidden_dim << "\n";
      continue;
    }
    for (std::uint64_t seed : cfg.sweep.seeds) {
      net::NetworkSpec spec = cfg.network;
      spec.kiti = cfg.kiti;
      spec.kiti.n_divide = nd;
      spec.kiti.coll_coef = cc;
      spec.kiti.seed = seed;
      net::TrainConfig topt = cfg.train.opt;
      topt.seed = seed;
      topt.checkpoints.clear();  // sweep keeps only final metrics
      net::TrainingRun run;
      try {
        run = net::train(spec, topt, shared_data);
      } catch (const net::DivergenceDetected& e) {
        if (!quiet)
          std::cerr << "skipping diverged sweep point: n_divide=" << nd
                    << " coll_coef=" << cc << " seed=" << seed << " (" << e.what() << ")\n";
        continue;
      }
      const auto cm = condense::cosine_matrix(run.final_params[analyze_layer - 1].W,
                                              static_cast<int>(analyze_layer),
                                              static_cast<int>(topt.epochs));
      rows.push_back({nd, cc, seed, run.final_mse,
                      condense::condensation_score(cm, cfg.train.score_threshold)});
    }
  }

  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    return std::tie(a.n_divide, a.coll_coef, a.seed) < std::tie(b.n_divide, b.coll_coef, b.seed);
  });
  std::string csv = "n_divide,coll_coef,seed,final_train_mse,final_condensation_score\n";
  for (const auto& r : rows)
    csv += csv_row({std::to_string(r.n_divide), format_double(r.coll_coef),
                    std::to_string(r.seed), format_double(r.mse), format_double(r.score)});
  out.write("sweep.csv", csv);
  out.finalize();

  if (!quiet) std::cout << "sweep: " << rows.size() << " rows -> " << out.path().string() << "\n";
  return 0;
}

}  // namespace kitinet::cli
