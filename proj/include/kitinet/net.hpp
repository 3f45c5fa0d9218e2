#pragma once

// Minimal dense-network training engine with hand-rolled reverse-mode
// differentiation. Supports plain and skip-connected stacks of affine +
// activation layers, with selected hidden layers swapped for the collision
// operator: there the usual residual combination x + v is replaced by
// kitinet_forward(x = layer input, v = activated affine output).
//
// Layer indexing is 1-based. A spec of depth L has L affine layers:
//   layer 1:        input_dim  -> hidden_dim
//   layers 2..L-1:  hidden_dim -> hidden_dim   (skip / collision eligible)
//   layer L:        hidden_dim -> output_dim   (linear output)

#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "kitinet/kinetic.hpp"
#include "kitinet/mat.hpp"
#include "kitinet/rng.hpp"

namespace kitinet::net {

struct StaleTape : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct DivergenceDetected : std::runtime_error {
  std::vector<double> partial_losses;
  std::size_t epoch = 0;
  DivergenceDetected(std::string msg, std::vector<double> losses, std::size_t ep)
      : std::runtime_error(std::move(msg)), partial_losses(std::move(losses)), epoch(ep) {}
};

enum class Activation { relu, leaky_relu, sigmoid, tanh };

inline constexpr double kLeakySlope = 0.01;

inline double activate(Activation a, double z) {
  switch (a) {
    case Activation::relu: return z > 0.0 ? z : 0.0;
    case Activation::leaky_relu: return z > 0.0 ? z : kLeakySlope * z;
    case Activation::sigmoid: return 1.0 / (1.0 + std::exp(-z));
    case Activation::tanh: return std::tanh(z);
  }
  return z;
}

// derivative given the preactivation z and the stored activation value
inline double activate_grad(Activation a, double z, double act) {
  switch (a) {
    case Activation::relu: return z > 0.0 ? 1.0 : 0.0;
    case Activation::leaky_relu: return z > 0.0 ? 1.0 : kLeakySlope;
    case Activation::sigmoid: return act * (1.0 - act);
    case Activation::tanh: return 1.0 - act * act;
  }
  return 1.0;
}

struct NetworkSpec {
  std::size_t input_dim = 5;
  std::size_t hidden_dim = 64;
  std::size_t output_dim = 1;
  std::size_t depth = 3;
  Activation activation = Activation::relu;
  bool skip_connections = false;
  std::set<std::size_t> kiti_layers;  // 1-based indices of collision layers
  double gamma = 4.0;                 // init std is 1 / hidden_dim^gamma
  KitiConfig kiti;

  std::size_t layer_in(std::size_t l0) const { return l0 == 0 ? input_dim : hidden_dim; }
  std::size_t layer_out(std::size_t l0) const {
    return l0 + 1 == depth ? output_dim : hidden_dim;
  }

  void validate() const {
    if (depth < 2) throw std::invalid_argument("NetworkSpec: depth must be >= 2");
    if (input_dim < 1 || hidden_dim < 1 || output_dim < 1)
      throw std::invalid_argument("NetworkSpec: dimensions must be >= 1");
    kiti.validate();
    for (std::size_t l : kiti_layers) {
      if (l < 1 || l >= depth)
        throw std::invalid_argument("NetworkSpec: kiti_layers must lie in 1..depth-1");
      if (layer_in(l - 1) != layer_out(l - 1))
        throw std::invalid_argument(
            "NetworkSpec: collision layer " + std::to_string(l) +
            " needs equal input/output width");
      if (layer_out(l - 1) % kiti.n_divide != 0)
        throw std::invalid_argument(
            "NetworkSpec: layer width is not divisible by n_divide");
    }
  }
};

struct LayerParams {
  Mat W;                  // out x in
  std::vector<double> b;  // out
};
using ParameterSet = std::vector<LayerParams>;

enum class Optimizer { sgd, adam };

struct TrainConfig {
  std::size_t epochs = 100;
  double learning_rate = 0.01;
  Optimizer optimizer = Optimizer::sgd;
  std::size_t batch = 0;  // 0 = full batch
  std::uint64_t seed = 1;
  std::vector<std::size_t> checkpoints = {1, 10, 50, 100};

  void validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
      throw std::invalid_argument("TrainConfig: learning_rate must be finite and >= 0");
    for (std::size_t i = 1; i < checkpoints.size(); ++i)
      if (checkpoints[i] <= checkpoints[i - 1])
        throw std::invalid_argument("TrainConfig: checkpoints must be strictly ascending");
  }
};

struct Dataset {
  Mat inputs;   // n x input_dim
  Mat targets;  // n x output_dim
};

// Regression target: sum_{i=1..5} 3.5 sin(5 x_i + 1) on [-4, 2]^5.
inline double sine_target(std::span<const double> x) {
  double t = 0.0;
  for (double xi : x) t += 3.5 * std::sin(5.0 * xi + 1.0);
  return t;
}

inline Dataset make_sine_dataset(std::size_t n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("make_sine_dataset: n must be >= 1");
  Dataset ds{Mat(n, 5), Mat(n, 1)};
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < 5; ++c) ds.inputs(r, c) = -4.0 + 6.0 * rng.uniform01();
    ds.targets(r, 0) = sine_target(ds.inputs.row(r));
  }
  return ds;
}

// Every weight and bias ~ N(0, sigma^2) with sigma = hidden_dim^-gamma.
inline ParameterSet init_network(const NetworkSpec& spec, Rng& rng) {
  spec.validate();
  const double sigma = std::pow(static_cast<double>(spec.hidden_dim), -spec.gamma);
  ParameterSet params;
  params.reserve(spec.depth);
  for (std::size_t l = 0; l < spec.depth; ++l) {
    LayerParams p{Mat(spec.layer_out(l), spec.layer_in(l)),
                  std::vector<double>(spec.layer_out(l), 0.0)};
    for (double& w : p.W.d) w = sigma * rng.gaussian();
    for (double& w : p.b) w = sigma * rng.gaussian();
    params.push_back(std::move(p));
  }
  return params;
}

struct LayerTrace {
  Mat input;      // n x in
  Mat preact;     // n x out
  Mat activated;  // n x out (== preact for the linear output layer)
  std::vector<CollisionReport> reports;  // one per row, collision layers only
};

struct Tape {
  bool training = false;
  std::size_t depth = 0, input_dim = 0, hidden_dim = 0, output_dim = 0;
  std::vector<LayerTrace> layers;
};

struct ForwardResult {
  Mat outputs;  // n x output_dim
  Tape tape;
};

// Frozen collision structure for gradient checks / replay: reports per
// layer (1-based index - 1) per row; empty vectors for ordinary layers.
using FrozenReports = std::vector<std::vector<CollisionReport>>;

// Runs the batch row by row. Collision layers draw their randomness from
// key.child(layer).child(row_id), so each dataset row owns a stream and a
// batched pass equals the same rows run one at a time.
inline ForwardResult forward(const ParameterSet& params, const NetworkSpec& spec,
                             const Mat& inputs, bool training, RngKey key,
                             const std::vector<std::size_t>* row_ids = nullptr,
                             const FrozenReports* frozen = nullptr) {
  spec.validate();
  if (params.size() != spec.depth) throw std::invalid_argument("forward: params/spec depth mismatch");
  if (inputs.cols != spec.input_dim) throw std::invalid_argument("forward: bad input width");
  if (row_ids && row_ids->size() != inputs.rows)
    throw std::invalid_argument("forward: row_ids length mismatch");

  const std::size_t n = inputs.rows;
  ForwardResult res;
  res.tape.training = training;
  res.tape.depth = spec.depth;
  res.tape.input_dim = spec.input_dim;
  res.tape.hidden_dim = spec.hidden_dim;
  res.tape.output_dim = spec.output_dim;
  res.tape.layers.resize(spec.depth);
  res.outputs = Mat(n, spec.output_dim);

  Mat h = inputs;
  for (std::size_t l = 0; l < spec.depth; ++l) {
    const auto& P = params[l];
    const std::size_t in = spec.layer_in(l);
    const std::size_t out = spec.layer_out(l);
    if (P.W.rows != out || P.W.cols != in || P.b.size() != out)
      throw std::invalid_argument("forward: parameter shape mismatch at layer " +
                                  std::to_string(l + 1));

    LayerTrace& trace = res.tape.layers[l];
    trace.input = h;
    trace.preact = Mat(n, out);
    trace.activated = Mat(n, out);

    const bool last = l + 1 == spec.depth;
    const bool is_kiti = spec.kiti_layers.count(l + 1) > 0;
    const bool is_skip = !last && !is_kiti && spec.skip_connections && in == out;
    if (is_kiti && training) trace.reports.reserve(n);

    Mat y(n, out);
    for (std::size_t r = 0; r < n; ++r) {
      const auto hr = trace.input.row(r);
      auto z = trace.preact.row(r);
      auto a = trace.activated.row(r);
      for (std::size_t o = 0; o < out; ++o) {
        double s = P.b[o];
        const auto wrow = P.W.row(o);
        for (std::size_t c = 0; c < in; ++c) s += wrow[c] * hr[c];
        z[o] = s;
        a[o] = last ? s : activate(spec.activation, s);
      }

      auto yr = y.row(r);
      if (is_kiti) {
        KitiConfig kcfg = spec.kiti;
        kcfg.training = training;
        const std::size_t row_id = row_ids ? (*row_ids)[r] : r;
        if (frozen && !(*frozen)[l].empty()) {
          const auto xo = kitinet_forward_frozen(hr, a, kcfg, (*frozen)[l][r]);
          for (std::size_t o = 0; o < out; ++o) yr[o] = xo[o];
          if (training) trace.reports.push_back((*frozen)[l][r]);
        } else {
          Rng rng(key.child(l + 1).child(row_id));
          auto fo = kitinet_forward(hr, a, kcfg, rng);
          for (std::size_t o = 0; o < out; ++o) yr[o] = fo.x_out[o];
          if (training) trace.reports.push_back(std::move(*fo.report));
        }
      } else if (is_skip) {
        for (std::size_t o = 0; o < out; ++o) yr[o] = hr[o] + a[o];
      } else {
        for (std::size_t o = 0; o < out; ++o) yr[o] = a[o];
      }
    }
    h = std::move(y);
  }
  res.outputs = std::move(h);
  return res;
}

using Gradients = ParameterSet;

inline Gradients zero_like(const ParameterSet& params) {
  Gradients g;
  g.reserve(params.size());
  for (const auto& p : params)
    g.push_back({Mat(p.W.rows, p.W.cols), std::vector<double>(p.b.size(), 0.0)});
  return g;
}

// Reverse pass over the recorded tape. Collision layers hand their upstream
// gradient to kitinet_vjp with the run's frozen report; the grad w.r.t. the
// layer input combines the collision x-path with the affine path.
inline Gradients backward(const Tape& tape, const ParameterSet& params,
                          const NetworkSpec& spec, const Mat& loss_grad) {
  if (!tape.training) throw StaleTape("backward: tape was not recorded in training mode");
  if (tape.depth != spec.depth || tape.layers.size() != spec.depth ||
      params.size() != spec.depth)
    throw StaleTape("backward: tape/spec/params depth mismatch");
  if (tape.input_dim != spec.input_dim || tape.hidden_dim != spec.hidden_dim ||
      tape.output_dim != spec.output_dim)
    throw StaleTape("backward: tape dimensions do not match spec");
  const std::size_t n = loss_grad.rows;
  if (n != tape.layers[0].input.rows || loss_grad.cols != spec.output_dim)
    throw StaleTape("backward: loss gradient shape mismatch");

  Gradients grads = zero_like(params);
  Mat g = loss_grad;  // dL/d(layer output), walked backwards

  for (std::size_t li = spec.depth; li-- > 0;) {
    const LayerTrace& trace = tape.layers[li];
    const auto& P = params[li];
    const std::size_t in = spec.layer_in(li);
    const std::size_t out = spec.layer_out(li);
    const bool last = li + 1 == spec.depth;
    const bool is_kiti = spec.kiti_layers.count(li + 1) > 0;
    const bool is_skip = !last && !is_kiti && spec.skip_connections && in == out;
    if (is_kiti && trace.reports.size() != n)
      throw StaleTape("backward: missing collision reports at layer " + std::to_string(li + 1));

    Mat g_in(n, in);
    std::vector<double> da(out);
    for (std::size_t r = 0; r < n; ++r) {
      const auto gr = g.row(r);
      const auto hr = trace.input.row(r);
      const auto zr = trace.preact.row(r);
      const auto ar = trace.activated.row(r);
      auto gi = g_in.row(r);
      for (std::size_t c = 0; c < in; ++c) gi[c] = 0.0;

      if (is_kiti) {
        KitiConfig kcfg = spec.kiti;
        kcfg.training = true;
        const auto vjp = kitinet_vjp(hr, ar, kcfg, trace.reports[r], gr);
        for (std::size_t o = 0; o < out; ++o) da[o] = vjp.grad_v[o];
        for (std::size_t c = 0; c < in; ++c) gi[c] += vjp.grad_x[c];
      } else if (is_skip) {
        for (std::size_t o = 0; o < out; ++o) da[o] = gr[o];
        for (std::size_t c = 0; c < in; ++c) gi[c] += gr[c];
      } else {
        for (std::size_t o = 0; o < out; ++o) da[o] = gr[o];
      }

      for (std::size_t o = 0; o < out; ++o) {
        const double dz = last ? da[o] : da[o] * activate_grad(spec.activation, zr[o], ar[o]);
        grads[li].b[o] += dz;
        auto gw = grads[li].W.row(o);
        const auto wrow = P.W.row(o);
        for (std::size_t c = 0; c < in; ++c) {
          gw[c] += dz * hr[c];
          gi[c] += dz * wrow[c];
        }
      }
    }
    g = std::move(g_in);
  }
  return grads;
}

// mean over samples of the squared error summed across output dims
inline std::pair<double, Mat> mse_loss(const Mat& outputs, const Mat& targets) {
  if (outputs.rows != targets.rows || outputs.cols != targets.cols)
    throw std::invalid_argument("mse_loss: shape mismatch");
  const auto n = static_cast<double>(outputs.rows);
  double loss = 0.0;
  Mat grad(outputs.rows, outputs.cols);
  for (std::size_t r = 0; r < outputs.rows; ++r)
    for (std::size_t c = 0; c < outputs.cols; ++c) {
      const double e = outputs(r, c) - targets(r, c);
      loss += e * e / n;
      grad(r, c) = 2.0 * e / n;
    }
  return {loss, std::move(grad)};
}

struct TrainingRun {
  std::vector<double> losses;  // per epoch, at the gradient evaluation point
  std::vector<std::pair<std::size_t, ParameterSet>> checkpoints;  // after the epoch's update
  ParameterSet final_params;
  double final_mse = 0.0;
};

namespace detail {

struct AdamState {
  Gradients m, v;
  std::size_t t = 0;
};

inline void apply_step(ParameterSet& params, const Gradients& grads, const TrainConfig& cfg,
                       AdamState& adam) {
  if (cfg.optimizer == Optimizer::sgd) {
    for (std::size_t l = 0; l < params.size(); ++l) {
      for (std::size_t i = 0; i < params[l].W.d.size(); ++i)
        params[l].W.d[i] -= cfg.learning_rate * grads[l].W.d[i];
      for (std::size_t i = 0; i < params[l].b.size(); ++i)
        params[l].b[i] -= cfg.learning_rate * grads[l].b[i];
    }
    return;
  }
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  adam.t += 1;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(adam.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(adam.t));
  for (std::size_t l = 0; l < params.size(); ++l) {
    auto step = [&](double& p, double g, double& m, double& v) {
      m = b1 * m + (1.0 - b1) * g;
      v = b2 * v + (1.0 - b2) * g * g;
      p -= cfg.learning_rate * (m / c1) / (std::sqrt(v / c2) + eps);
    };
    for (std::size_t i = 0; i < params[l].W.d.size(); ++i)
      step(params[l].W.d[i], grads[l].W.d[i], adam.m[l].W.d[i], adam.v[l].W.d[i]);
    for (std::size_t i = 0; i < params[l].b.size(); ++i)
      step(params[l].b[i], grads[l].b[i], adam.m[l].b[i], adam.v[l].b[i]);
  }
}

}  // namespace detail

// Full-batch (or sequential-minibatch) training on MSE. Collision streams
// derive from (kiti.seed, epoch, layer, dataset row); initialization from
// the train seed. Checkpoints are value copies taken right after the
// epoch's parameter update.
inline TrainingRun train(const NetworkSpec& spec, const TrainConfig& cfg,
                         const Dataset& data) {
  spec.validate();
  cfg.validate();
  if (data.inputs.rows < 1 || data.inputs.rows != data.targets.rows)
    throw std::invalid_argument("train: dataset is empty or inconsistent");

  const std::size_t n = data.inputs.rows;
  const std::size_t batch = (cfg.batch == 0 || cfg.batch > n) ? n : cfg.batch;

  Rng init_rng(RngKey::root(cfg.seed).child(1));
  ParameterSet params = init_network(spec, init_rng);
  detail::AdamState adam{zero_like(params), zero_like(params), 0};

  TrainingRun run;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const RngKey epoch_key = RngKey::root(spec.kiti.seed).child(epoch);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t count = std::min(batch, n - start);
      Mat bx(count, data.inputs.cols), bt(count, data.targets.cols);
      std::vector<std::size_t> rows(count);
      for (std::size_t r = 0; r < count; ++r) {
        rows[r] = start + r;
        for (std::size_t c = 0; c < data.inputs.cols; ++c) bx(r, c) = data.inputs(start + r, c);
        for (std::size_t c = 0; c < data.targets.cols; ++c) bt(r, c) = data.targets(start + r, c);
      }
      ForwardResult fr;
      try {
        fr = forward(params, spec, bx, true, epoch_key, &rows);
      } catch (const NonFiniteInput&) {
        // hidden activations overflowed before the loss could be evaluated
        throw DivergenceDetected("training diverged (non-finite activations) at epoch " +
                                     std::to_string(epoch),
                                 run.losses, epoch);
      }
      auto [loss, lgrad] = mse_loss(fr.outputs, bt);
      if (!std::isfinite(loss))
        throw DivergenceDetected("training loss became non-finite at epoch " +
                                     std::to_string(epoch),
                                 run.losses, epoch);
      epoch_loss += loss * static_cast<double>(count) / static_cast<double>(n);
      const Gradients grads = backward(fr.tape, params, spec, lgrad);
      detail::apply_step(params, grads, cfg, adam);
    }
    run.losses.push_back(epoch_loss);
    for (std::size_t cp : cfg.checkpoints)
      if (cp == epoch) run.checkpoints.emplace_back(epoch, params);
  }

  run.final_params = params;
  auto fr = forward(params, spec, data.inputs, false, RngKey::root(spec.kiti.seed));
  run.final_mse = mse_loss(fr.outputs, data.targets).first;
  return run;
}

}  // namespace kitinet::net
