#pragma once

// Adversarial data augmentation with a Wasserstein-style penalty in
// embedding space.
//
// For a fixed model, an origin (x0, y0) and penalty weight gamma, the
// maximization phase climbs the surrogate objective
//
//     phi(x) = loss(model; (x, y0)) - gamma * c((g(x), y0), (g(x0), y0)),
//     c((z, y), (z', y')) = 0.5 * ||z - z'||^2  (+inf when y != y'),
//
// where g is the model embedding. Ascent is plain gradient ascent from x0 with
// greedy acceptance: a step is kept only when phi strictly increases. The
// minimization phase is mini-batch SGD on cross-entropy over the union of
// source and every adversarial sample produced so far. train_one alternates
// the two phases k times; train_ensemble repeats train_one for each radius
// rho in the grid with gamma = gamma_scale / rho.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "adafall/binary_io.hpp"
#include "adafall/graph.hpp"
#include "adafall/models.hpp"
#include "adafall/parallel.hpp"
#include "adafall/rng.hpp"

namespace adafall {

struct TrainConfig {
  std::vector<double> rho_grid{0.001, 0.01, 0.1, 1.0, 4.0};
  double gamma_scale = 1.0;  // gamma = gamma_scale / rho
  std::size_t k = 100;
  std::size_t t_adv = 15;
  double eta_adv = 1.0;
  std::size_t t_min = 100;
  double lr = 1e-3;
  std::size_t batch = 32;
  std::size_t epochs_warmup = 1;
  std::uint64_t seed = 0;
  std::size_t threads = 1;  // concurrent ensemble members; results do not depend on it

  [[nodiscard]] double gamma_for(double rho) const { return gamma_scale / rho; }

  void validate() const {
    if (rho_grid.empty()) throw Error(ErrorCode::InvalidArgument, "rho_grid is empty");
    for (std::size_t i = 0; i < rho_grid.size(); ++i) {
      if (!(rho_grid[i] > 0.0) || !std::isfinite(rho_grid[i])) {
        throw Error(ErrorCode::InvalidArgument, "rho values must be positive");
      }
      if (i > 0 && !(rho_grid[i] > rho_grid[i - 1])) {
        throw Error(ErrorCode::InvalidArgument, "rho_grid must be strictly increasing");
      }
    }
    if (!(gamma_scale > 0.0)) throw Error(ErrorCode::InvalidArgument, "gamma_scale must be positive");
    if (!(eta_adv >= 0.0) || !(lr >= 0.0)) throw Error(ErrorCode::InvalidArgument, "step sizes must be >= 0");
    if (batch == 0) throw Error(ErrorCode::InvalidArgument, "batch must be positive");
  }
};

/// A model-ready training example (input already at the model's shape).
struct Example {
  Tensor x;
  std::uint8_t label = 0;
};

struct AdversarialExample {
  Example example;
  std::size_t origin = 0;     // index into the source portion
  std::size_t iteration = 0;  // 1-based augmentation round that produced it
  double transport_cost = 0.0;
};

/// Source samples (shared, read-only) plus appended adversarial samples.
class AugmentedDataset {
 public:
  explicit AugmentedDataset(std::shared_ptr<const std::vector<Example>> source) : source_(std::move(source)) {}

  [[nodiscard]] std::size_t size() const { return source_->size() + appended_.size(); }
  [[nodiscard]] std::size_t source_size() const { return source_->size(); }
  [[nodiscard]] const std::vector<Example>& source() const { return *source_; }
  [[nodiscard]] const std::vector<AdversarialExample>& appended() const { return appended_; }

  [[nodiscard]] const Example& at(std::size_t i) const {
    return i < source_->size() ? (*source_)[i] : appended_[i - source_->size()].example;
  }

  void append(std::vector<AdversarialExample> batch) {
    for (auto& a : batch) {
      if (a.origin >= source_->size()) throw Error(ErrorCode::InvalidArgument, "adversarial origin out of range");
      if (a.example.label != (*source_)[a.origin].label) {
        throw Error(ErrorCode::BadLabel, "adversarial sample label differs from its origin");
      }
      appended_.push_back(std::move(a));
    }
  }

 private:
  std::shared_ptr<const std::vector<Example>> source_;
  std::vector<AdversarialExample> appended_;
};

inline constexpr double kInfiniteCost = std::numeric_limits<double>::infinity();

/// 0.5 * ||z - z0||^2 for equal labels, kInfiniteCost otherwise.
template <class T>
double transport_cost(std::span<const T> z, std::size_t y, std::span<const T> z0, std::size_t y0) {
  if (z.size() != z0.size()) {
    throw Error(ErrorCode::ShapeMismatch, "embeddings of size " + std::to_string(z.size()) + " and " +
                                              std::to_string(z0.size()));
  }
  if (y != y0) return kInfiniteCost;
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double d = static_cast<double>(z[i]) - static_cast<double>(z0[i]);
    s += d * d;
  }
  return 0.5 * s;
}

struct SurrogateValue {
  double objective = 0.0;
  double loss = 0.0;
  double transport = 0.0;
  Tensor grad_x;  // filled when requested
};

namespace detail {

inline SurrogateValue eval_surrogate(const ModelState& model, const Tensor& x, const Tensor& anchor_embedding,
                                     std::size_t y0, double gamma, bool with_grad) {
  Graph g;
  const Var xv = with_grad ? g.input(x) : g.constant(x);
  const auto fv = forward(g, model, xv, false);
  const Var loss = softmax_cross_entropy(g, fv.logits, y0);
  const Var cost = half_squared_distance(g, fv.embedding, g.constant(anchor_embedding));
  SurrogateValue out;
  out.loss = g.value(loss)[0];
  out.transport = g.value(cost)[0];
  out.objective = out.loss - gamma * out.transport;
  if (with_grad) {
    const Var obj = add(g, loss, scale(g, cost, -gamma));
    g.backward(obj);
    out.grad_x = Tensor(x.shape, g.grad(xv));
  }
  return out;
}

}  // namespace detail

/// loss(model; (x, y0)) - gamma * 0.5 * ||g(x) - g(x0)||^2
inline double surrogate_objective(const ModelState& model, const Tensor& x, const Tensor& x0, std::size_t y0,
                                  double gamma) {
  if (x.shape != x0.shape) {
    throw Error(ErrorCode::ShapeMismatch, shape_string(x.shape) + " vs " + shape_string(x0.shape));
  }
  return detail::eval_surrogate(model, x, embed(model, x0), y0, gamma, false).objective;
}

struct MaximizeResult {
  Tensor x;
  std::uint8_t label = 0;
  double transport_cost = 0.0;
  std::vector<double> objective_trace;  // retained objective at step 0..t_adv
  std::size_t accepted_steps = 0;
};

/// Greedy gradient ascent on the surrogate from each origin. The model is
/// only read. A rejected proposal ends the climb for that origin, since the
/// next proposal from the same point would be identical; the trace repeats
/// the retained value for the remaining steps.
inline std::vector<MaximizeResult> maximize_phase(const ModelState& model, std::span<const Example> origins,
                                                  double gamma, std::size_t t_adv, double eta_adv) {
  std::vector<MaximizeResult> out;
  out.reserve(origins.size());
  for (const auto& origin : origins) {
    MaximizeResult r{origin.x, origin.label, 0.0, {}, 0};
    if (t_adv == 0) {
      r.objective_trace.push_back(detail::eval_surrogate(model, origin.x, embed(model, origin.x), origin.label,
                                                         gamma, false).objective);
      out.push_back(std::move(r));
      continue;
    }
    const Tensor anchor = embed(model, origin.x);
    SurrogateValue current = detail::eval_surrogate(model, origin.x, anchor, origin.label, gamma, true);
    r.objective_trace.push_back(current.objective);
    bool stalled = eta_adv == 0.0;
    for (std::size_t step = 0; step < t_adv; ++step) {
      if (!stalled) {
        Tensor proposal = r.x;
        for (std::size_t i = 0; i < proposal.size(); ++i) {
          proposal.values[i] += static_cast<float>(eta_adv * current.grad_x.values[i]);
        }
        SurrogateValue next = detail::eval_surrogate(model, proposal, anchor, origin.label, gamma, true);
        if (std::isfinite(next.objective) && next.objective > current.objective) {
          r.x = std::move(proposal);
          current = std::move(next);
          ++r.accepted_steps;
        } else {
          stalled = true;
        }
      }
      r.objective_trace.push_back(current.objective);
    }
    r.transport_cost = current.transport;
    out.push_back(std::move(r));
  }
  return out;
}

/// k distinct indices from [0, n) (partial Fisher-Yates), k <= n.
inline std::vector<std::size_t> draw_without_replacement(Rng& rng, std::size_t n, std::size_t k) {
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  for (std::size_t i = 0; i < k; ++i) std::swap(pool[i], pool[i + rng.below(n - i)]);
  pool.resize(k);
  return pool;
}

struct MinimizeResult {
  double mean_loss = 0.0;
  std::size_t steps = 0;
  std::size_t batch = 0;  // effective (clamped) batch size
};

/// t_min steps of plain SGD on softmax cross-entropy; each batch is drawn
/// uniformly without replacement from the whole augmented dataset and the
/// batch is clamped to the dataset size.
inline MinimizeResult minimize_phase(ModelState& model, const AugmentedDataset& data, std::size_t t_min, double lr,
                                     std::size_t batch, Rng& rng) {
  if (data.size() == 0) throw Error(ErrorCode::EmptySet, "minimize_phase on an empty dataset");
  if (batch == 0) throw Error(ErrorCode::InvalidArgument, "batch must be positive");
  const std::size_t b = std::min(batch, data.size());
  const std::size_t n_params = model.param_tensor_count();
  std::vector<std::vector<double>> acc(n_params);
  double loss_sum = 0.0;
  for (std::size_t step = 0; step < t_min; ++step) {
    for (std::size_t p = 0; p < n_params; ++p) acc[p].assign(model.param(p).size(), 0.0);
    for (const std::size_t idx : draw_without_replacement(rng, data.size(), b)) {
      const Example& ex = data.at(idx);
      Graph g;
      const auto fv = forward(g, model, g.constant(ex.x), true);
      const Var loss = softmax_cross_entropy(g, fv.logits, ex.label);
      g.backward(loss);
      loss_sum += g.value(loss)[0];
      for (std::size_t p = 0; p < n_params; ++p) {
        const auto& gp = g.grad(fv.params[p]);
        for (std::size_t i = 0; i < gp.size(); ++i) acc[p][i] += gp[i];
      }
    }
    if (lr == 0.0) continue;
    const double step_scale = lr / static_cast<double>(b);
    for (std::size_t p = 0; p < n_params; ++p) {
      auto& values = model.param(p).values;
      for (std::size_t i = 0; i < values.size(); ++i) values[i] -= static_cast<float>(step_scale * acc[p][i]);
    }
  }
  return {t_min ? loss_sum / static_cast<double>(t_min * b) : 0.0, t_min, b};
}

struct IterationRecord {
  std::size_t iteration = 0;  // 0 = warmup
  double mean_loss = 0.0;
  double mean_transport = 0.0;
  std::size_t dataset_size = 0;
};

struct TrainedMember {
  ModelState model;
  double rho = 0.0;
  double gamma = 0.0;
  std::vector<IterationRecord> telemetry;
  std::size_t source_size = 0;
  std::size_t augmented_size = 0;
  std::size_t iterations = 0;
};

/// RNG stream ids derived from a member seed.
inline constexpr std::uint64_t kOriginStream = 1;
inline constexpr std::uint64_t kBatchStream = 2;

inline void require_both_labels(std::span<const Example> data) {
  bool has[2] = {false, false};
  for (const auto& e : data) {
    if (e.label > 1) throw Error(ErrorCode::BadLabel, "label " + std::to_string(e.label));
    has[e.label] = true;
  }
  if (!has[0] || !has[1]) throw Error(ErrorCode::DegenerateData, "training data must contain both labels");
}

inline std::size_t warmup_steps(const TrainConfig& config, std::size_t n) {
  const std::size_t b = std::min(config.batch, n);
  return config.epochs_warmup * ((n + b - 1) / b);
}

/// Init, warmup epochs of plain minimization, then k rounds of
/// {draw origins from the source portion, maximize, append, minimize}.
inline TrainedMember train_one(const ModelConfig& model_config, std::uint64_t seed,
                               std::shared_ptr<const std::vector<Example>> source, double rho,
                               const TrainConfig& config) {
  config.validate();
  if (!(rho > 0.0)) throw Error(ErrorCode::InvalidArgument, "rho must be positive");
  require_both_labels(*source);

  TrainedMember m;
  m.model = init_params<float>(model_config, seed);
  m.rho = rho;
  m.gamma = config.gamma_for(rho);
  m.source_size = source->size();

  AugmentedDataset data(source);
  Rng origin_rng(seed, kOriginStream);
  Rng batch_rng(seed, kBatchStream);

  const auto warm = minimize_phase(m.model, data, warmup_steps(config, data.size()), config.lr, config.batch,
                                   batch_rng);
  m.telemetry.push_back({0, warm.mean_loss, 0.0, data.size()});

  const std::size_t per_round = std::min(config.batch, data.source_size());
  for (std::size_t it = 1; it <= config.k; ++it) {
    const auto picks = draw_without_replacement(origin_rng, data.source_size(), per_round);
    std::vector<Example> origins;
    origins.reserve(picks.size());
    for (std::size_t i : picks) origins.push_back(data.source()[i]);

    auto adv = maximize_phase(m.model, origins, m.gamma, config.t_adv, config.eta_adv);
    double transport_sum = 0.0;
    std::vector<AdversarialExample> batch;
    for (std::size_t j = 0; j < adv.size(); ++j) {
      transport_sum += adv[j].transport_cost;
      batch.push_back({Example{std::move(adv[j].x), adv[j].label}, picks[j], it, adv[j].transport_cost});
    }
    data.append(std::move(batch));

    const auto res = minimize_phase(m.model, data, config.t_min, config.lr, config.batch, batch_rng);
    m.telemetry.push_back({it, res.mean_loss, transport_sum / static_cast<double>(adv.size()), data.size()});
    m.iterations = it;
  }
  m.augmented_size = data.size();
  return m;
}

struct Ensemble {
  std::vector<TrainedMember> members;  // same order as rho_grid
};

/// One member per rho, member i seeded with config.seed + i.
inline Ensemble train_ensemble(const ModelConfig& model_config, std::shared_ptr<const std::vector<Example>> source,
                               const TrainConfig& config) {
  config.validate();
  Ensemble e;
  e.members.resize(config.rho_grid.size());
  parallel_for(config.rho_grid.size(), config.threads, [&](std::size_t i) {
    e.members[i] = train_one(model_config, config.seed + i, source, config.rho_grid[i], config);
  });
  return e;
}

inline std::string telemetry_text(const std::vector<IterationRecord>& records) {
  std::string out = "iteration\tmean_loss\tmean_transport_cost\tdataset_size\n";
  char buf[160];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, "%zu\t%.9g\t%.9g\t%zu\n", r.iteration, r.mean_loss, r.mean_transport,
                  r.dataset_size);
    out += buf;
  }
  return out;
}

inline void write_telemetry(const std::filesystem::path& path, const std::vector<IterationRecord>& records) {
  write_file_text(path, telemetry_text(records));
}

}  // namespace adafall
