#pragma once

// CNN and LSTM fall classifiers over the graph engine.
//
// Both expose logits and the embedding g(theta_f; x): the activation of the
// last hidden layer, which is where transport cost is measured. Parameters
// are split into embedding parameters (theta_f) and the final dense layer
// (theta_c).
//
// CNN (full profile):
//   500x60x1 -conv5x5(64),relu-> 500x60x64 -pool-> 250x30x64
//   -conv5x5(128),relu-> 250x30x128 -pool-> 125x15x128 -flatten-> 240000
//   -dense,relu-> 256 (embedding) -dense-> 2
// LSTM (full profile): 500 steps x 60 features, h = 200, embedding = h_T,
//   logits = dense(h_T).

#include <cmath>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "adafall/csi.hpp"
#include "adafall/graph.hpp"
#include "adafall/rng.hpp"

namespace adafall {

enum class ModelKind { Cnn, Lstm };

inline std::string to_string(ModelKind kind) { return kind == ModelKind::Cnn ? "cnn" : "lstm"; }

struct CnnConfig {
  std::size_t input_rows = kSampleRows;
  std::size_t input_cols = kColumns;
  std::size_t conv1_maps = 64;
  std::size_t conv2_maps = 128;
  std::size_t kernel = 5;
  std::size_t fc1_width = 256;
  std::size_t classes = 2;

  /// 10x6 input with fc1 width 8 and slim conv stacks; used by tests and
  /// desk-scale experiments.
  static CnnConfig reduced() { return CnnConfig{10, 6, 8, 16, 5, 8, 2}; }

  [[nodiscard]] std::size_t pooled_rows() const { return input_rows / 2 / 2; }
  [[nodiscard]] std::size_t pooled_cols() const { return input_cols / 2 / 2; }
  [[nodiscard]] std::size_t flat_size() const { return pooled_rows() * pooled_cols() * conv2_maps; }

  void validate() const {
    if (input_rows < 4 || input_cols < 4) throw Error(ErrorCode::InvalidArgument, "cnn input must be >= 4x4");
    if (kernel % 2 == 0 || kernel == 0) throw Error(ErrorCode::InvalidArgument, "cnn kernel must be odd");
    if (conv1_maps == 0 || conv2_maps == 0 || fc1_width == 0 || classes < 2) {
      throw Error(ErrorCode::InvalidArgument, "cnn widths must be positive and classes >= 2");
    }
  }
  bool operator==(const CnnConfig&) const = default;
};

struct LstmConfig {
  std::size_t steps = kSampleRows;
  std::size_t features = kColumns;
  std::size_t hidden = 200;
  std::size_t classes = 2;

  static LstmConfig reduced() { return LstmConfig{10, 6, 8, 2}; }

  void validate() const {
    if (steps == 0 || features == 0 || hidden == 0 || classes < 2) {
      throw Error(ErrorCode::InvalidArgument, "lstm sizes must be positive and classes >= 2");
    }
  }
  bool operator==(const LstmConfig&) const = default;
};

using ModelConfig = std::variant<CnnConfig, LstmConfig>;

inline ModelKind kind_of(const ModelConfig& c) {
  return std::holds_alternative<CnnConfig>(c) ? ModelKind::Cnn : ModelKind::Lstm;
}

/// Model input shape [rows, cols].
inline Shape input_shape(const ModelConfig& c) {
  if (const auto* cnn = std::get_if<CnnConfig>(&c)) return {cnn->input_rows, cnn->input_cols};
  const auto& l = std::get<LstmConfig>(c);
  return {l.steps, l.features};
}

inline std::size_t embedding_dim(const ModelConfig& c) {
  if (const auto* cnn = std::get_if<CnnConfig>(&c)) return cnn->fc1_width;
  return std::get<LstmConfig>(c).hidden;
}

inline std::size_t class_count(const ModelConfig& c) {
  return std::visit([](const auto& cfg) { return cfg.classes; }, c);
}

template <class T>
struct NamedTensor {
  std::string name;
  BasicTensor<T> tensor;

  bool operator==(const NamedTensor&) const = default;
};

template <class T>
struct BasicModelState {
  ModelConfig config;
  std::uint64_t seed = 0;
  std::vector<NamedTensor<T>> embed_params;       // theta_f
  std::vector<NamedTensor<T>> classifier_params;  // theta_c: the final dense layer

  [[nodiscard]] ModelKind kind() const { return kind_of(config); }
  [[nodiscard]] std::size_t param_tensor_count() const { return embed_params.size() + classifier_params.size(); }

  /// Parameter by flat index: embedding tensors first, then classifier.
  BasicTensor<T>& param(std::size_t i) {
    return i < embed_params.size() ? embed_params[i].tensor : classifier_params[i - embed_params.size()].tensor;
  }
  [[nodiscard]] const BasicTensor<T>& param(std::size_t i) const {
    return i < embed_params.size() ? embed_params[i].tensor : classifier_params[i - embed_params.size()].tensor;
  }
  [[nodiscard]] const std::string& param_name(std::size_t i) const {
    return i < embed_params.size() ? embed_params[i].name : classifier_params[i - embed_params.size()].name;
  }

  [[nodiscard]] std::size_t count(const std::vector<NamedTensor<T>>& group) const {
    std::size_t n = 0;
    for (const auto& p : group) n += p.tensor.size();
    return n;
  }

  template <class U>
  [[nodiscard]] BasicModelState<U> cast() const {
    BasicModelState<U> out{config, seed, {}, {}};
    for (const auto& p : embed_params) out.embed_params.push_back({p.name, p.tensor.template cast<U>()});
    for (const auto& p : classifier_params) out.classifier_params.push_back({p.name, p.tensor.template cast<U>()});
    return out;
  }

  bool operator==(const BasicModelState&) const = default;
};

using ModelState = BasicModelState<float>;

// ---------------------------------------------------------------------------
// Initialization

/// Uniform Glorot bound sqrt(6 / (fan_in + fan_out)).
inline double glorot_bound(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

namespace detail {

template <class T>
BasicTensor<T> glorot_tensor(Shape shape, std::size_t fan_in, std::size_t fan_out, std::uint64_t seed,
                             std::uint64_t stream) {
  BasicTensor<T> t(std::move(shape));
  const double a = glorot_bound(fan_in, fan_out);
  Rng rng(seed, stream);
  for (auto& v : t.values) v = static_cast<T>(rng.uniform(-a, a));
  return t;
}

}  // namespace detail

/// Weights ~ U(-a, a) with the Glorot bound per tensor; biases zero except
/// the LSTM forget-gate block, which is 1.
template <class T = float>
BasicModelState<T> init_params(const ModelConfig& config, std::uint64_t seed) {
  BasicModelState<T> s{config, seed, {}, {}};
  std::uint64_t stream = 0;
  if (const auto* c = std::get_if<CnnConfig>(&config)) {
    c->validate();
    const std::size_t K = c->kernel;
    s.embed_params.push_back({"conv1.weight", detail::glorot_tensor<T>({K, K, 1, c->conv1_maps}, K * K,
                                                                       K * K * c->conv1_maps, seed, stream++)});
    s.embed_params.push_back({"conv1.bias", BasicTensor<T>({c->conv1_maps})});
    s.embed_params.push_back(
        {"conv2.weight", detail::glorot_tensor<T>({K, K, c->conv1_maps, c->conv2_maps}, K * K * c->conv1_maps,
                                                  K * K * c->conv2_maps, seed, stream++)});
    s.embed_params.push_back({"conv2.bias", BasicTensor<T>({c->conv2_maps})});
    s.embed_params.push_back({"fc1.weight", detail::glorot_tensor<T>({c->flat_size(), c->fc1_width}, c->flat_size(),
                                                                     c->fc1_width, seed, stream++)});
    s.embed_params.push_back({"fc1.bias", BasicTensor<T>({c->fc1_width})});
    s.classifier_params.push_back({"fc2.weight", detail::glorot_tensor<T>({c->fc1_width, c->classes}, c->fc1_width,
                                                                          c->classes, seed, stream++)});
    s.classifier_params.push_back({"fc2.bias", BasicTensor<T>({c->classes})});
  } else {
    const auto& l = std::get<LstmConfig>(config);
    l.validate();
    const std::size_t G = 4 * l.hidden;
    s.embed_params.push_back({"lstm.W", detail::glorot_tensor<T>({l.features, G}, l.features, G, seed, stream++)});
    s.embed_params.push_back({"lstm.U", detail::glorot_tensor<T>({l.hidden, G}, l.hidden, G, seed, stream++)});
    BasicTensor<T> b({G});
    for (std::size_t k = l.hidden; k < 2 * l.hidden; ++k) b.values[k] = T{1};
    s.embed_params.push_back({"lstm.b", std::move(b)});
    s.classifier_params.push_back(
        {"out.weight", detail::glorot_tensor<T>({l.hidden, l.classes}, l.hidden, l.classes, seed, stream++)});
    s.classifier_params.push_back({"out.bias", BasicTensor<T>({l.classes})});
  }
  return s;
}

// ---------------------------------------------------------------------------
// Forward

struct ForwardVars {
  Var logits;
  Var embedding;
  std::vector<Var> params;  // flat order: embedding tensors, then classifier
};

template <class T>
Var reshape(BasicGraph<T>& g, Var input, Shape shape) {
  BasicTensor<T> out = g.value(input);
  detail::check_shape(shape_size(shape) == out.size(), "reshape",
                      shape_string(out.shape) + " -> " + shape_string(shape));
  out.shape = std::move(shape);
  return g.record(std::move(out), {input}, [input](BasicGraph<T>& gr, std::size_t self) {
    const auto& dy = gr.grad(Var{self});
    auto& dx = gr.grad_mut(input);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
  });
}

/// Record a forward pass. `input` must have the model's input shape
/// [rows, cols]; parameters are borrowed from `state`.
template <class T>
ForwardVars forward(BasicGraph<T>& g, const BasicModelState<T>& state, Var input, bool param_grads) {
  const Shape want = input_shape(state.config);
  detail::check_shape(g.value(input).shape == want, "forward",
                      "input " + shape_string(g.value(input).shape) + ", model expects " + shape_string(want));
  ForwardVars fv;
  for (std::size_t i = 0; i < state.param_tensor_count(); ++i) {
    fv.params.push_back(g.parameter(state.param(i), param_grads));
  }
  const auto& p = fv.params;

  if (const auto* c = std::get_if<CnnConfig>(&state.config)) {
    Var x = reshape(g, input, {c->input_rows, c->input_cols, 1});
    x = maxpool2d(g, relu(g, conv2d(g, x, p[0], p[1], Padding::Same)));
    x = maxpool2d(g, relu(g, conv2d(g, x, p[2], p[3], Padding::Same)));
    fv.embedding = relu(g, dense(g, flatten(g, x), p[4], p[5]));
    fv.logits = dense(g, fv.embedding, p[6], p[7]);
    return fv;
  }

  const auto& l = std::get<LstmConfig>(state.config);
  const LstmParams lp{p[0], p[1], p[2]};
  LstmState st{g.constant(BasicTensor<T>({l.hidden})), g.constant(BasicTensor<T>({l.hidden}))};
  for (std::size_t t = 0; t < l.steps; ++t) {
    st = lstm_cell(g, slice_row(g, input, t), st.h, st.c, lp);
  }
  fv.embedding = st.h;
  fv.logits = dense(g, st.h, p[3], p[4]);
  return fv;
}

/// Resize a 500x60 sample to the model input shape by 2-D block mean.
inline Tensor prepare_input(const Matrix& sample, const ModelConfig& config) {
  const Shape shape = input_shape(config);
  if (sample.rows == shape[0] && sample.cols == shape[1]) return Tensor(shape, sample.values);
  const Matrix m = block_mean(sample, shape[0], shape[1]);
  return Tensor(shape, m.values);
}

template <class T>
struct Prediction {
  BasicTensor<T> logits;
  BasicTensor<T> embedding;
};

/// Forward pass without gradients.
template <class T>
Prediction<T> predict(const BasicModelState<T>& state, const BasicTensor<T>& input) {
  BasicGraph<T> g;
  const Var x = g.constant(input);
  const auto fv = forward(g, state, x, false);
  return {g.value(fv.logits), g.value(fv.embedding)};
}

template <class T>
Prediction<T> cnn_forward(const BasicModelState<T>& state, const BasicTensor<T>& input) {
  if (state.kind() != ModelKind::Cnn) throw Error(ErrorCode::InvalidArgument, "cnn_forward on an LSTM state");
  return predict(state, input);
}

template <class T>
Prediction<T> lstm_forward(const BasicModelState<T>& state, const BasicTensor<T>& input) {
  if (state.kind() != ModelKind::Lstm) throw Error(ErrorCode::InvalidArgument, "lstm_forward on a CNN state");
  return predict(state, input);
}

/// g(theta_f; x)
template <class T>
BasicTensor<T> embed(const BasicModelState<T>& state, const BasicTensor<T>& input) {
  return predict(state, input).embedding;
}

/// argmax of logits; ties resolve to class 0.
template <class T>
std::size_t predicted_label(const BasicTensor<T>& logits) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (logits.values[i] > logits.values[best]) best = i;
  }
  return best;
}

}  // namespace adafall
