#pragma once

// Leave-one-domain-out experiments: splitting, metrics, ensemble model
// selection, config files and report/telemetry/checkpoint output.

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "adafall/ada.hpp"
#include "adafall/checkpoint.hpp"
#include "adafall/csi.hpp"
#include "adafall/models.hpp"
#include "adafall/synth.hpp"

namespace adafall {

// ---------------------------------------------------------------------------
// Leave-one-domain-out split

struct LodoSplit {
  std::vector<std::size_t> train;       // indices into the input, ascending
  std::vector<std::size_t> validation;  // stratified slice of the training domains
  std::vector<std::size_t> test;        // every sample of the held-out domain
  std::uint16_t holdout = 0;
};

/// Validation takes round(fraction * n) samples from every (domain, label)
/// group of the training domains, chosen by a seeded shuffle.
template <class SampleT>
LodoSplit lodo_split(std::span<const SampleT> samples, std::uint16_t holdout, std::uint64_t seed,
                     double validation_fraction = 0.1) {
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "validation_fraction must be in [0,1)");
  }
  std::map<std::pair<std::uint16_t, std::uint8_t>, std::vector<std::size_t>> groups;
  std::set<std::uint16_t> domains;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    domains.insert(samples[i].domain_id);
    groups[{samples[i].domain_id, samples[i].label}].push_back(i);
  }
  if (domains.size() < 2) throw Error(ErrorCode::SingleDomain, "need at least two domains");
  if (!domains.contains(holdout)) throw Error(ErrorCode::UnknownDomain, "holdout " + std::to_string(holdout));

  LodoSplit split;
  split.holdout = holdout;
  for (auto& [key, idx] : groups) {
    if (key.first == holdout) {
      split.test.insert(split.test.end(), idx.begin(), idx.end());
      continue;
    }
    Rng rng(mix_seed(seed, key.first, key.second), 0x76616c ^ holdout);
    std::vector<std::size_t> order = idx;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    const auto n_val = static_cast<std::size_t>(std::llround(validation_fraction * static_cast<double>(order.size())));
    split.validation.insert(split.validation.end(), order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
    split.train.insert(split.train.end(), order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.validation.begin(), split.validation.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

// ---------------------------------------------------------------------------
// Metrics

struct Confusion {
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;

  [[nodiscard]] std::size_t total() const { return tp + tn + fp + fn; }

  void add(std::size_t truth, std::size_t predicted) {
    if (truth == 1) (predicted == 1 ? tp : fn) += 1;
    else (predicted == 1 ? fp : tn) += 1;
  }
};

/// Rates with empty denominators are reported as 0.
struct Metrics {
  Confusion confusion;
  double accuracy = 0.0;
  double precision = 0.0;
  double false_alarm = 0.0;  // FP / actual negatives
};

inline Metrics metrics_from(const Confusion& c) {
  auto ratio = [](std::size_t num, std::size_t den) { return den ? static_cast<double>(num) / static_cast<double>(den) : 0.0; };
  return {c, ratio(c.tp + c.tn, c.total()), ratio(c.tp, c.tp + c.fp), ratio(c.fp, c.fp + c.tn)};
}

inline std::size_t predict_label(const ModelState& model, const Tensor& x) {
  return predicted_label(predict(model, x).logits);
}

inline Metrics evaluate(const ModelState& model, std::span<const Example> examples) {
  if (examples.empty()) throw Error(ErrorCode::EmptySet, "evaluate on an empty set");
  Confusion c;
  for (const auto& e : examples) c.add(e.label, predict_label(model, e.x));
  return metrics_from(c);
}

/// Index of the highest accuracy; ties go to the lowest index.
inline std::size_t select_model(std::span<const double> accuracies) {
  if (accuracies.empty()) throw Error(ErrorCode::EmptyEnsemble, "no members to select from");
  std::size_t best = 0;
  for (std::size_t i = 1; i < accuracies.size(); ++i) {
    if (accuracies[i] > accuracies[best]) best = i;
  }
  return best;
}

inline std::size_t select_model(const Ensemble& ensemble, std::span<const Example> validation) {
  if (ensemble.members.empty()) throw Error(ErrorCode::EmptyEnsemble, "no members to select from");
  std::vector<double> acc;
  for (const auto& m : ensemble.members) acc.push_back(evaluate(m.model, validation).accuracy);
  return select_model(acc);
}

/// Majority of binary predictions; ties go to class 0.
inline std::size_t majority_vote(std::span<const std::size_t> predictions) {
  if (predictions.empty()) throw Error(ErrorCode::EmptyEnsemble, "no votes");
  const auto ones = static_cast<std::size_t>(std::count(predictions.begin(), predictions.end(), std::size_t{1}));
  return 2 * ones > predictions.size() ? 1 : 0;
}

inline std::size_t ensemble_vote(std::span<const ModelState* const> models, const Tensor& x) {
  if (models.empty()) throw Error(ErrorCode::EmptyEnsemble, "no members to vote");
  std::vector<std::size_t> votes;
  for (const auto* m : models) votes.push_back(predict_label(*m, x));
  return majority_vote(votes);
}

inline std::size_t ensemble_vote(const Ensemble& ensemble, const Tensor& x) {
  std::vector<const ModelState*> models;
  for (const auto& m : ensemble.members) models.push_back(&m.model);
  return ensemble_vote(models, x);
}

inline Metrics evaluate_vote(std::span<const ModelState* const> models, std::span<const Example> examples) {
  if (examples.empty()) throw Error(ErrorCode::EmptySet, "evaluate on an empty set");
  Confusion c;
  for (const auto& e : examples) c.add(e.label, ensemble_vote(models, e.x));
  return metrics_from(c);
}

// ---------------------------------------------------------------------------
// Config files: line-oriented `key = value`, '#' starts a comment.

struct ExperimentConfig {
  std::filesystem::path data_dir;
  std::optional<std::uint16_t> holdout;
  double validation_fraction = 0.1;
  ModelConfig model = CnnConfig::reduced();
  TrainConfig train;
  // Synthetic generation (used by `synth --config`).
  std::vector<DomainParams> domains;
  std::size_t per_domain = 20;
  double fall_fraction = 0.5;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size() || !std::isfinite(d)) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw Error(ErrorCode::Config, key + ": expected a number, got '" + v + "'");
  }
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) {
    throw Error(ErrorCode::Config, key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

}  // namespace detail

/// Every key is documented in README.md; unknown keys are errors.
inline ExperimentConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {}) {
  std::map<std::string, std::string> kv;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::Config, "line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = detail::trim(std::string_view(t).substr(0, eq));
    const std::string value = detail::trim(std::string_view(t).substr(eq + 1));
    if (key.empty()) throw Error(ErrorCode::Config, "line " + std::to_string(line_no) + ": empty key");
    if (!kv.emplace(key, value).second) throw Error(ErrorCode::Config, "duplicate key '" + key + "'");
  }

  ExperimentConfig cfg;
  auto take = [&](const std::string& key) -> std::optional<std::string> {
    const auto it = kv.find(key);
    if (it == kv.end()) return std::nullopt;
    std::string v = it->second;
    kv.erase(it);
    return v;
  };
  auto num = [&](const std::string& key, auto& dst) {
    if (auto v = take(key)) {
      using D = std::remove_reference_t<decltype(dst)>;
      if constexpr (std::is_floating_point_v<D>) dst = detail::parse_double(key, *v);
      else dst = static_cast<D>(detail::parse_uint(key, *v));
    }
  };

  if (auto v = take("data_dir")) {
    cfg.data_dir = *v;
    if (cfg.data_dir.is_relative() && !base_dir.empty()) cfg.data_dir = base_dir / cfg.data_dir;
  }
  if (auto v = take("holdout")) {
    const auto h = detail::parse_uint("holdout", *v);
    if (h > 0xFFFF) throw Error(ErrorCode::Config, "holdout out of range");
    cfg.holdout = static_cast<std::uint16_t>(h);
  }
  num("validation_fraction", cfg.validation_fraction);

  const std::string kind = take("model").value_or("cnn");
  const std::string profile = take("profile").value_or("reduced");
  if (profile != "full" && profile != "reduced") throw Error(ErrorCode::Config, "profile must be full or reduced");
  if (kind == "cnn") {
    CnnConfig c = profile == "full" ? CnnConfig{} : CnnConfig::reduced();
    num("input_rows", c.input_rows);
    num("input_cols", c.input_cols);
    num("conv1_maps", c.conv1_maps);
    num("conv2_maps", c.conv2_maps);
    num("kernel", c.kernel);
    num("fc1_width", c.fc1_width);
    cfg.model = c;
  } else if (kind == "lstm") {
    LstmConfig l = profile == "full" ? LstmConfig{} : LstmConfig::reduced();
    num("input_rows", l.steps);
    num("input_cols", l.features);
    num("lstm_hidden", l.hidden);
    cfg.model = l;
  } else {
    throw Error(ErrorCode::Config, "model must be cnn or lstm, got '" + kind + "'");
  }

  if (auto v = take("rho_grid")) {
    cfg.train.rho_grid.clear();
    std::stringstream ss(*v);
    std::string item;
    while (std::getline(ss, item, ',')) cfg.train.rho_grid.push_back(detail::parse_double("rho_grid", detail::trim(item)));
  }
  num("gamma_scale", cfg.train.gamma_scale);
  num("k", cfg.train.k);
  num("t_adv", cfg.train.t_adv);
  num("eta_adv", cfg.train.eta_adv);
  num("t_min", cfg.train.t_min);
  num("lr", cfg.train.lr);
  num("batch", cfg.train.batch);
  num("epochs_warmup", cfg.train.epochs_warmup);
  num("seed", cfg.train.seed);
  num("threads", cfg.train.threads);
  num("per_domain", cfg.per_domain);
  num("fall_fraction", cfg.fall_fraction);

  // domain.<id>.<field>
  std::map<std::uint16_t, DomainParams> domains;
  for (auto it = kv.begin(); it != kv.end();) {
    const std::string& key = it->first;
    if (key.rfind("domain.", 0) != 0) {
      ++it;
      continue;
    }
    const auto dot = key.find('.', 7);
    if (dot == std::string::npos) throw Error(ErrorCode::Config, "malformed domain key '" + key + "'");
    const auto id = detail::parse_uint(key, key.substr(7, dot - 7));
    if (id > 0xFFFF) throw Error(ErrorCode::Config, "domain id out of range in '" + key + "'");
    auto& d = domains[static_cast<std::uint16_t>(id)];
    d.domain_id = static_cast<std::uint16_t>(id);
    const std::string field = key.substr(dot + 1);
    const double value = detail::parse_double(key, it->second);
    if (field == "gain") d.gain = value;
    else if (field == "noise_std") d.noise_std = value;
    else if (field == "burst_freq_hz") d.burst_freq_hz = value;
    else if (field == "smoothing") d.smoothing = value;
    else throw Error(ErrorCode::Config, "unknown domain field '" + field + "'");
    it = kv.erase(it);
  }
  for (const auto& [id, d] : domains) cfg.domains.push_back(d);

  if (!kv.empty()) throw Error(ErrorCode::Config, "unknown key '" + kv.begin()->first + "'");

  try {
    cfg.train.validate();
    std::visit([](const auto& c) { c.validate(); }, cfg.model);
    for (const auto& d : cfg.domains) d.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::Config, e.what());
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Config, "cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.parent_path());
}

// ---------------------------------------------------------------------------
// Sample directories

/// All *.csiw files of a directory, in filename order.
inline std::vector<Sample> load_sample_dir(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw Error(ErrorCode::Io, "sample directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".csiw") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw Error(ErrorCode::Io, "no .csiw samples in " + dir.string());
  std::vector<Sample> out;
  out.reserve(files.size());
  for (const auto& f : files) {
    try {
      out.push_back(read_sample_file(f));
    } catch (const Error& e) {
      throw Error(ErrorCode::Io, f.string() + ": " + e.what());
    }
  }
  return out;
}

inline std::string sample_filename(const Sample& s, std::size_t index) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "d%03u_%05zu_y%u.csiw", static_cast<unsigned>(s.domain_id), index,
                static_cast<unsigned>(s.label));
  return buf;
}

inline std::vector<Example> to_examples(std::span<const Sample> samples, std::span<const std::size_t> indices,
                                        const ModelConfig& config) {
  std::vector<Example> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back({prepare_input(samples[i].data, config), samples[i].label});
  return out;
}

// ---------------------------------------------------------------------------
// Reports

struct MemberRow {
  std::size_t index = 0;
  double rho = 0.0;
  double gamma = 0.0;
  std::optional<Metrics> validation;
  Metrics test;
};

struct EvalReport {
  std::optional<std::uint16_t> holdout;
  std::string model;
  std::size_t train_size = 0;
  std::size_t validation_size = 0;
  std::size_t test_size = 0;
  std::vector<MemberRow> members;
  std::optional<std::size_t> selected;
  Metrics vote;
};

namespace detail {

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

inline std::string metric_cols(const Metrics& m) {
  const auto& c = m.confusion;
  return fmt("%.6f", m.accuracy) + "\t" + fmt("%.6f", m.precision) + "\t" + fmt("%.6f", m.false_alarm) + "\t" +
         std::to_string(c.tp) + "\t" + std::to_string(c.tn) + "\t" + std::to_string(c.fp) + "\t" +
         std::to_string(c.fn);
}

inline nlohmann::ordered_json metrics_json(const Metrics& m) {
  return {{"accuracy", m.accuracy}, {"precision", m.precision}, {"false_alarm", m.false_alarm},
          {"tp", m.confusion.tp},   {"tn", m.confusion.tn},     {"fp", m.confusion.fp},
          {"fn", m.confusion.fn}};
}

}  // namespace detail

/// Tab-separated table, one row per member, then the selection and vote rows.
inline std::string report_table(const EvalReport& r) {
  std::string out = "# holdout=" + (r.holdout ? std::to_string(*r.holdout) : std::string("-")) + " model=" + r.model +
                    " train=" + std::to_string(r.train_size) + " validation=" + std::to_string(r.validation_size) +
                    " test=" + std::to_string(r.test_size) + "\n";
  out += "row\tmember\trho\tgamma\tval_accuracy\taccuracy\tprecision\tfalse_alarm\ttp\ttn\tfp\tfn\n";
  auto member_line = [&](const std::string& tag, const MemberRow& m) {
    return tag + "\t" + std::to_string(m.index) + "\t" + detail::fmt("%g", m.rho) + "\t" + detail::fmt("%g", m.gamma) +
           "\t" + (m.validation ? detail::fmt("%.6f", m.validation->accuracy) : std::string("-")) + "\t" +
           detail::metric_cols(m.test) + "\n";
  };
  for (const auto& m : r.members) out += member_line("model", m);
  if (r.selected) out += member_line("selected", r.members.at(*r.selected));
  out += "ensemble_vote\t-\t-\t-\t-\t" + detail::metric_cols(r.vote) + "\n";
  return out;
}

/// One JSON object per line: a header, each member, selection, vote.
inline std::string report_jsonl(const EvalReport& r) {
  using J = nlohmann::ordered_json;
  std::string out;
  J head = {{"type", "header"}, {"model", r.model}, {"train", r.train_size},
            {"validation", r.validation_size}, {"test", r.test_size}};
  head["holdout"] = r.holdout ? J(*r.holdout) : J(nullptr);
  out += head.dump() + "\n";
  for (const auto& m : r.members) {
    J j = {{"type", "model"}, {"member", m.index}, {"rho", m.rho}, {"gamma", m.gamma}};
    j["val_accuracy"] = m.validation ? J(m.validation->accuracy) : J(nullptr);
    j["test"] = detail::metrics_json(m.test);
    out += j.dump() + "\n";
  }
  if (r.selected) out += J({{"type", "selected"}, {"member", *r.selected}}).dump() + "\n";
  out += J({{"type", "ensemble_vote"}, {"test", detail::metrics_json(r.vote)}}).dump() + "\n";
  return out;
}

/// Parse report_jsonl output back into a report.
inline EvalReport parse_report_jsonl(std::string_view text) {
  EvalReport r;
  std::istringstream in{std::string(text)};
  std::string line;
  auto metrics = [](const nlohmann::json& j) {
    Confusion c{j.at("tp"), j.at("tn"), j.at("fp"), j.at("fn")};
    return Metrics{c, j.at("accuracy"), j.at("precision"), j.at("false_alarm")};
  };
  try {
    while (std::getline(in, line)) {
      if (detail::trim(line).empty()) continue;
      const auto j = nlohmann::json::parse(line);
      const std::string type = j.at("type");
      if (type == "header") {
        r.model = j.at("model");
        r.train_size = j.at("train");
        r.validation_size = j.at("validation");
        r.test_size = j.at("test");
        if (!j.at("holdout").is_null()) r.holdout = j.at("holdout").get<std::uint16_t>();
      } else if (type == "model") {
        MemberRow m{j.at("member"), j.at("rho"), j.at("gamma"), std::nullopt, metrics(j.at("test"))};
        if (!j.at("val_accuracy").is_null()) m.validation = Metrics{{}, j.at("val_accuracy"), 0.0, 0.0};
        r.members.push_back(m);
      } else if (type == "selected") {
        r.selected = j.at("member").get<std::size_t>();
      } else if (type == "ensemble_vote") {
        r.vote = metrics(j.at("test"));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Io, std::string("malformed report: ") + e.what());
  }
  return r;
}

// ---------------------------------------------------------------------------
// End-to-end experiment

namespace detail {

inline void write_atomic(const std::filesystem::path& path, std::string_view text) {
  auto tmp = path;
  tmp += ".tmp";
  write_file_text(tmp, text);
  std::filesystem::rename(tmp, path);
}

inline std::string member_stem(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "member_%02zu", i);
  return buf;
}

}  // namespace detail

struct ExperimentOutput {
  EvalReport report;
  Ensemble ensemble;
  LodoSplit split;
};

/// Train and evaluate an ensemble on in-memory samples.
inline ExperimentOutput run_experiment(const ExperimentConfig& cfg, std::span<const Sample> samples) {
  if (!cfg.holdout) throw Error(ErrorCode::Config, "holdout is required");
  ExperimentOutput out;
  out.split = lodo_split(samples, *cfg.holdout, cfg.train.seed, cfg.validation_fraction);
  auto train = std::make_shared<const std::vector<Example>>(to_examples(samples, out.split.train, cfg.model));
  const auto validation = to_examples(samples, out.split.validation, cfg.model);
  const auto test = to_examples(samples, out.split.test, cfg.model);

  out.ensemble = train_ensemble(cfg.model, train, cfg.train);

  auto& r = out.report;
  r.holdout = cfg.holdout;
  r.model = to_string(kind_of(cfg.model));
  r.train_size = train->size();
  r.validation_size = validation.size();
  r.test_size = test.size();
  std::vector<double> val_acc;
  std::vector<const ModelState*> models;
  for (std::size_t i = 0; i < out.ensemble.members.size(); ++i) {
    const auto& m = out.ensemble.members[i];
    MemberRow row{i, m.rho, m.gamma, std::nullopt, evaluate(m.model, test)};
    if (!validation.empty()) {
      row.validation = evaluate(m.model, validation);
      val_acc.push_back(row.validation->accuracy);
    }
    r.members.push_back(row);
    models.push_back(&m.model);
  }
  if (!val_acc.empty()) r.selected = select_model(val_acc);
  r.vote = evaluate_vote(models, test);
  return out;
}

/// Load config and samples, train, evaluate and write into out_dir:
/// report.tsv, report.jsonl, telemetry_member_NN.tsv and
/// checkpoints/member_NN.{adaw,json}. Nothing is written when loading fails;
/// the report files are written last.
inline EvalReport run_experiment(const std::filesystem::path& config_path, const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  const ExperimentConfig cfg = load_config(config_path);
  if (cfg.data_dir.empty()) throw Error(ErrorCode::Config, "data_dir is required");
  const auto samples = load_sample_dir(cfg.data_dir);
  auto result = run_experiment(cfg, samples);

  std::error_code ec;
  fs::create_directories(out_dir / "checkpoints", ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create " + out_dir.string() + ": " + ec.message());
  for (std::size_t i = 0; i < result.ensemble.members.size(); ++i) {
    const auto& m = result.ensemble.members[i];
    save_model(out_dir / "checkpoints" / detail::member_stem(i), m.model,
               {{"rho", m.rho}, {"gamma", m.gamma}, {"member", i}, {"iterations", m.iterations},
                {"augmented_size", m.augmented_size}});
    write_telemetry(out_dir / ("telemetry_" + detail::member_stem(i) + ".tsv"), m.telemetry);
  }
  detail::write_atomic(out_dir / "report.jsonl", report_jsonl(result.report));
  detail::write_atomic(out_dir / "report.tsv", report_table(result.report));
  return result.report;
}

/// Evaluate saved members (checkpoint_dir/member_*.json) on a sample directory.
inline EvalReport evaluate_checkpoints(const std::filesystem::path& checkpoint_dir, const std::filesystem::path& data_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(checkpoint_dir, ec)) throw Error(ErrorCode::Io, "checkpoint directory not found: " + checkpoint_dir.string());
  std::vector<fs::path> stems;
  for (const auto& entry : fs::directory_iterator(checkpoint_dir)) {
    const auto& p = entry.path();
    if (p.extension() == ".json" && p.stem().string().rfind("member_", 0) == 0) {
      stems.push_back(p.parent_path() / p.stem());
    }
  }
  std::sort(stems.begin(), stems.end());
  if (stems.empty()) throw Error(ErrorCode::Io, "no member checkpoints in " + checkpoint_dir.string());
  std::vector<LoadedModel> loaded;
  for (const auto& s : stems) loaded.push_back(load_model(s));

  const auto samples = load_sample_dir(data_dir);
  std::vector<std::size_t> all(samples.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;

  EvalReport r;
  r.model = to_string(loaded.front().state.kind());
  r.test_size = samples.size();
  std::vector<const ModelState*> models;
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    const auto& lm = loaded[i];
    const auto examples = to_examples(samples, all, lm.state.config);
    r.members.push_back({i, lm.sidecar.value("rho", 0.0), lm.sidecar.value("gamma", 0.0), std::nullopt,
                         evaluate(lm.state, examples)});
    models.push_back(&lm.state);
  }
  for (const auto* m : models) {
    if (!(m->config == models.front()->config)) throw Error(ErrorCode::Config, "members disagree on model config");
  }
  r.vote = evaluate_vote(models, to_examples(samples, all, models.front()->config));
  return r;
}

}  // namespace adafall
