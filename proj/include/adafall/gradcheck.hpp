#pragma once

// Analytic-vs-numeric gradient comparison, evaluated entirely in double.
//
// For every element x_i of every input, the numeric derivative is the central
// difference (f(x + h) - f(x - h)) / 2h with h = eps * max(1, |x_i|). The
// error for one element is |a - n| / max(|a|, |n|, abs_floor); the result is
// the maximum over all elements.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "adafall/graph.hpp"
#include "adafall/models.hpp"
#include "adafall/rng.hpp"

namespace adafall {

using GradFn = std::function<Var(BasicGraph<double>&, const std::vector<Var>&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_element = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckOptions {
  double eps = 1e-3;
  double abs_floor = 1e-6;
};

inline GradCheckResult grad_check(const GradFn& fn, const std::vector<BasicTensor<double>>& inputs,
                                  GradCheckOptions opt = {}) {
  BasicGraph<double> g;
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(g.input(t));
  const Var loss = fn(g, vars);
  g.backward(loss);

  auto evaluate = [&](const std::vector<BasicTensor<double>>& xs) {
    BasicGraph<double> h;
    std::vector<Var> hv;
    for (const auto& t : xs) hv.push_back(h.input(t));
    return h.value(fn(h, hv)).values.at(0);
  };

  GradCheckResult res;
  std::vector<BasicTensor<double>> work = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const auto& analytic = g.grad(vars[k]);
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double x = inputs[k].values[i];
      const double step = opt.eps * std::max(1.0, std::abs(x));
      work[k].values[i] = x + step;
      const double fp = evaluate(work);
      work[k].values[i] = x - step;
      const double fm = evaluate(work);
      work[k].values[i] = x;
      const double numeric = (fp - fm) / (2.0 * step);
      const double a = analytic[i];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), opt.abs_floor});
      if (err > res.max_rel_error) res = {err, k, i, a, numeric};
    }
  }
  return res;
}

/// Uniform(-1, 1) tensors of the given shapes.
inline std::vector<BasicTensor<double>> random_inputs(const std::vector<Shape>& shapes, std::uint64_t seed) {
  Rng rng(seed, 0x67726164ULL);
  std::vector<BasicTensor<double>> out;
  for (const auto& s : shapes) {
    BasicTensor<double> t(s);
    for (auto& v : t.values) v = rng.uniform(-1.0, 1.0);
    out.push_back(std::move(t));
  }
  return out;
}

/// Reduce an op's output to a scalar with fixed random weights so every
/// output element contributes a distinct coefficient.
inline Var project(BasicGraph<double>& g, Var out, std::uint64_t seed) {
  BasicTensor<double> w(g.value(out).shape);
  Rng rng(seed, 0x70726f6aULL);
  for (auto& v : w.values) v = rng.uniform(0.5, 1.5);
  return sum(g, mul(g, out, g.constant(std::move(w))));
}

inline GradCheckResult grad_check(const GradFn& op, const std::vector<Shape>& shapes, std::uint64_t seed,
                                  GradCheckOptions opt = {}) {
  return grad_check(op, random_inputs(shapes, seed), opt);
}

struct GradSuiteEntry {
  std::string name;
  std::uint64_t seed = 0;
  GradCheckResult result;
  double tolerance = 0.0;

  [[nodiscard]] bool passed() const { return result.max_rel_error < tolerance; }
};

namespace detail {

/// Distinct values spread over [-1, 1] with spacing >= 2/n, so neither ReLU
/// kinks nor max-pool ties fall inside a finite-difference step.
inline BasicTensor<double> separated_tensor(Shape shape, std::uint64_t seed) {
  BasicTensor<double> t(std::move(shape));
  const std::size_t n = t.size();
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  Rng rng(seed, 0x73657061ULL);
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
  for (std::size_t i = 0; i < n; ++i) {
    t.values[i] = -1.0 + (2.0 * static_cast<double>(perm[i]) + 1.0) / static_cast<double>(n);
  }
  return t;
}

}  // namespace detail

/// The diff_core oracle suite: every differentiable op plus input gradients
/// through both model embeddings (reduced profiles), for each seed.
inline std::vector<GradSuiteEntry> run_gradient_suite(const std::vector<std::uint64_t>& seeds) {
  constexpr double kNonlinearTol = 1e-4;
  constexpr double kLinearTol = 1e-6;
  std::vector<GradSuiteEntry> out;
  for (const std::uint64_t seed : seeds) {
    auto add_entry = [&](std::string name, GradCheckResult r, double tol) {
      out.push_back({std::move(name), seed, r, tol});
    };

    add_entry("conv2d",
              grad_check([seed](BasicGraph<double>& g, const std::vector<Var>& v) {
                return project(g, conv2d(g, v[0], v[1], v[2], Padding::Same), seed);
              }, {{5, 4, 2}, {3, 3, 2, 3}, {3}}, seed),
              kNonlinearTol);
    add_entry("conv2d_valid",
              grad_check([seed](BasicGraph<double>& g, const std::vector<Var>& v) {
                return project(g, conv2d(g, v[0], v[1], v[2], Padding::Valid), seed);
              }, {{5, 4, 2}, {3, 3, 2, 3}, {3}}, seed),
              kNonlinearTol);
    add_entry("maxpool2d",
              grad_check([seed](BasicGraph<double>& g, const std::vector<Var>& v) {
                return project(g, maxpool2d(g, v[0]), seed);
              }, {detail::separated_tensor({6, 4, 3}, seed)}),
              kNonlinearTol);
    add_entry("dense",
              grad_check([seed](BasicGraph<double>& g, const std::vector<Var>& v) {
                return project(g, dense(g, v[0], v[1], v[2]), seed);
              }, {{7}, {7, 5}, {5}}, seed),
              kLinearTol);
    add_entry("relu",
              grad_check([seed](BasicGraph<double>& g, const std::vector<Var>& v) {
                return project(g, relu(g, v[0]), seed);
              }, {detail::separated_tensor({24}, seed)}),
              kNonlinearTol);
    add_entry("lstm_cell",
              grad_check([seed](BasicGraph<double>& g, const std::vector<Var>& v) {
                const LstmState s = lstm_cell(g, v[0], v[1], v[2], LstmParams{v[3], v[4], v[5]});
                return add(g, project(g, s.h, seed), project(g, s.c, seed + 1));
              }, {{4}, {3}, {3}, {4, 12}, {3, 12}, {12}}, seed),
              kNonlinearTol);
    add_entry("softmax_cross_entropy",
              grad_check([seed](BasicGraph<double>& g, const std::vector<Var>& v) {
                return softmax_cross_entropy(g, v[0], static_cast<std::size_t>(seed % 4));
              }, {{4}}, seed),
              kNonlinearTol);
    add_entry("half_squared_distance",
              grad_check([](BasicGraph<double>& g, const std::vector<Var>& v) {
                return half_squared_distance(g, v[0], v[1]);
              }, {{6}, {6}}, seed),
              kNonlinearTol);

    for (const ModelConfig cfg : {ModelConfig{CnnConfig::reduced()}, ModelConfig{LstmConfig::reduced()}}) {
      const auto state = init_params<double>(cfg, seed);
      const std::string name = "embed_input_grad_" + to_string(kind_of(cfg));
      add_entry(name,
                grad_check([&state, seed](BasicGraph<double>& g, const std::vector<Var>& v) {
                  return project(g, forward(g, state, v[0], false).embedding, seed);
                }, {input_shape(cfg)}, seed),
                kNonlinearTol);
    }
  }
  return out;
}

}  // namespace adafall
