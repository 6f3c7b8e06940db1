// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "test_util.hpp"

using namespace adafall;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Checker {
 public:
  void expect(bool cond, const std::string& what) {
    if (!cond && first_failure_.empty()) first_failure_ = what;
    ok_ = ok_ && cond;
  }
  [[nodiscard]] bool ok() const { return ok_; }
  [[nodiscard]] const std::string& failure() const { return first_failure_; }

 private:
  bool ok_ = true;
  std::string first_failure_;
};

std::string fmt(const char* f, double v) { return detail::fmt(f, v); }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

double l2(const Tensor& a, const Tensor& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += double(a.values[i] - b.values[i]) * (a.values[i] - b.values[i]);
  return std::sqrt(s);
}

double plain_loss(const ModelState& m, const Tensor& x, std::size_t y) {
  const auto logits = predict(m, x).logits;
  const auto p = softmax(std::span<const float>(logits.values));
  return -std::log(p[y]);
}

std::shared_ptr<const std::vector<Example>> toy_source(std::size_t n, std::uint64_t seed) {
  Rng rng(seed, 3);
  auto out = std::make_shared<std::vector<Example>>();
  for (std::size_t i = 0; i < n; ++i) {
    const auto label = static_cast<std::uint8_t>(i % 2);
    Tensor x({10, 6});
    for (std::size_t r = 0; r < 10; ++r)
      for (std::size_t c = 0; c < 6; ++c) {
        x.values[r * 6 + c] = static_cast<float>(1.0 + 0.05 * rng.normal() - (label && r >= 4 && r <= 6 ? 0.3 : 0.0));
      }
    out->push_back({std::move(x), label});
  }
  return out;
}

bool same_bits(const CsiRecord& a, const CsiRecord& b) {
  if (a.timestamp_us != b.timestamp_us || a.pair_id != b.pair_id) return false;
  for (std::size_t s = 0; s < kSubcarriers; ++s) {
    if (std::bit_cast<std::uint32_t>(a.subcarriers[s].real()) != std::bit_cast<std::uint32_t>(b.subcarriers[s].real()) ||
        std::bit_cast<std::uint32_t>(a.subcarriers[s].imag()) != std::bit_cast<std::uint32_t>(b.subcarriers[s].imag())) {
      return false;
    }
  }
  return true;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto entries = run_gradient_suite({1, 2, 3, 4, 5});
  const double secs = seconds_since(t0);
  Checker c;
  std::set<std::string> names;
  double worst = 0;
  for (const auto& e : entries) {
    names.insert(e.name);
    worst = std::max(worst, e.result.max_rel_error / e.tolerance);
    c.expect(e.passed(), e.name + " seed " + std::to_string(e.seed) + " rel " + fmt("%.3g", e.result.max_rel_error));
  }
  c.expect(secs < 30.0, "runtime " + fmt("%.1f", secs) + " s");
  return {c.ok(), std::to_string(entries.size()) + " checks over " + std::to_string(names.size()) +
                      " ops, worst error/tolerance " + fmt("%.3g", worst) + (c.ok() ? "" : "; " + c.failure())};
}

Outcome parser_round_trip() {
  const auto t0 = std::chrono::steady_clock::now();
  Checker c;
  Rng rng(2024, 0);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto recs = testutil::random_records(rng, rng.below(40));
    const auto back = parse_record_stream(encode_record_stream(recs));
    bool same = back.size() == recs.size();
    for (std::size_t i = 0; same && i < recs.size(); ++i) same = same_bits(recs[i], back[i]);
    c.expect(same, "round trip " + std::to_string(trial));
  }
  const auto bytes = encode_record_stream(testutil::random_records(rng, 4));
  std::size_t cuts = 0;
  for (std::size_t cut = 0; cut < bytes.size(); ++cut, ++cuts) {
    ErrorCode code = ErrorCode::Io;
    bool threw = false;
    try {
      parse_record_stream(std::span<const std::uint8_t>(bytes.data(), cut));
    } catch (const Error& e) {
      threw = true;
      code = e.code();
    }
    c.expect(threw && code == ErrorCode::Truncated, "cut at " + std::to_string(cut));
  }
  const double secs = seconds_since(t0);
  c.expect(secs < 10.0, "runtime " + fmt("%.1f", secs) + " s");
  return {c.ok(), "1000 round trips, " + std::to_string(cuts) + " truncation points" + (c.ok() ? "" : "; " + c.failure())};
}

Outcome preprocessing() {
  Checker c;
  auto wave = [](std::size_t p, std::size_t s, std::size_t i) {
    return 1.5 + 0.5 * std::sin(0.003 * double(i) + 0.2 * double(s) + double(p));
  };
  const auto samples = records_to_samples(testutil::uniform_stream(25000, wave), 1, 4);
  c.expect(samples.size() == 2, "sample count " + std::to_string(samples.size()));
  for (const auto& s : samples) c.expect(s.data.rows == 500 && s.data.cols == 60, "sample shape");

  const auto flat = records_to_samples(testutil::uniform_stream(25000, [](auto p, auto s, auto) {
                                         return 0.25 + 0.5 * double(p) + 0.01 * double(s);
                                       }),
                                       0, 0);
  for (const auto& s : flat)
    for (std::size_t r = 0; r < s.data.rows; ++r)
      for (std::size_t col = 0; col < 60; ++col) {
        const float want = static_cast<float>(0.25 + 0.5 * double(col / 30) + 0.01 * double(col % 30));
        if (s.data(r, col) != want) {
          c.expect(false, "constant input not constant at row " + std::to_string(r));
          r = s.data.rows;
          break;
        }
      }

  // Linearity of the whole pipeline for nonnegative combinations of real amplitudes.
  auto ripple = [](std::size_t p, std::size_t s, std::size_t i) {
    return 0.3 + std::abs(std::cos(0.011 * double(i) * (1 + double(s % 5)) + double(p)));
  };
  const double a = 1.7, b = 0.4;
  const auto sx = records_to_samples(testutil::uniform_stream(25000, wave), 0, 0);
  const auto sy = records_to_samples(testutil::uniform_stream(25000, ripple), 0, 0);
  const auto sm = records_to_samples(
      testutil::uniform_stream(25000, [&](auto p, auto s, auto i) { return a * wave(p, s, i) + b * ripple(p, s, i); }), 0, 0);
  double worst = 0;
  for (std::size_t k = 0; k < sm.size(); ++k)
    for (std::size_t i = 0; i < sm[k].data.values.size(); ++i) {
      const double want = a * sx[k].data.values[i] + b * sy[k].data.values[i];
      worst = std::max(worst, testutil::rel_diff(sm[k].data.values[i], want));
    }
  c.expect(worst < 1e-5, "linearity rel " + fmt("%.3g", worst));
  return {c.ok(), "2 samples of 500x60, worst linearity rel error " + fmt("%.2g", worst) + (c.ok() ? "" : "; " + c.failure())};
}

Outcome surrogate_identities() {
  Checker c;
  double worst_gap = 0;
  std::size_t steps = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    for (const ModelConfig cfg : {ModelConfig{CnnConfig::reduced()}, ModelConfig{LstmConfig::reduced()}}) {
      const auto m = init_params(cfg, seed);
      const auto src = toy_source(4, seed);
      for (const auto& e : *src) {
        const double gap = std::abs(surrogate_objective(m, e.x, e.x, e.label, 0.5) - plain_loss(m, e.x, e.label));
        worst_gap = std::max(worst_gap, gap);
        c.expect(gap < 1e-6, "surrogate at origin differs by " + fmt("%.3g", gap));
        const auto& v = e.x.values;
        c.expect(transport_cost<float>(v, e.label, v, e.label) == 0.0, "transport(z,z) != 0");
        c.expect(transport_cost<float>(v, e.label, v, 1 - e.label) == kInfiniteCost, "label change not infinite");
      }
      for (const auto& r : maximize_phase(m, *src, 0.5, 15, 1.0)) {
        for (std::size_t t = 1; t < r.objective_trace.size(); ++t, ++steps) {
          c.expect(r.objective_trace[t] >= r.objective_trace[t - 1], "objective decreased at step " + std::to_string(t));
        }
      }
    }
  }
  return {c.ok(), "max |surrogate - loss| " + fmt("%.2g", worst_gap) + ", " + std::to_string(steps) +
                      " ascent steps monotone" + (c.ok() ? "" : "; " + c.failure())};
}

Outcome penalty_limit() {
  Checker c;
  const auto m = init_params(CnnConfig::reduced(), 3);
  const auto src = toy_source(2, 3);
  const std::span<const Example> origin(src->data(), 1);
  double prev = std::numeric_limits<double>::infinity();
  std::string trail;
  for (int e = 0; e <= 9; ++e) {
    const double gamma = std::pow(10.0, e);
    const double d = l2(maximize_phase(m, origin, gamma, 15, 1.0)[0].x, origin[0].x);
    c.expect(d <= prev, "distance grew at gamma 1e" + std::to_string(e));
    prev = d;
    if (e == 0 || e == 9) trail += (trail.empty() ? "" : " -> ") + fmt("%.3g", d);
  }
  c.expect(prev < 1e-3, "distance at 1e9 is " + fmt("%.3g", prev));
  return {c.ok(), "||x_adv - x0|| from gamma 1 to 1e9: " + trail + (c.ok() ? "" : "; " + c.failure())};
}

Outcome erm_reduction() {
  Checker c;
  const auto src = toy_source(20, 4);
  TrainConfig cfg;
  cfg.rho_grid = {1.0};
  cfg.k = 3;
  cfg.batch = 8;
  cfg.t_adv = 0;
  cfg.t_min = 4;
  cfg.lr = 0.02;
  cfg.epochs_warmup = 2;
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    const auto m = train_one(CnnConfig::reduced(), seed, src, 0.1, cfg);

    auto ref = init_params(CnnConfig::reduced(), seed);
    AugmentedDataset data(src);
    Rng origins(seed, kOriginStream), batch(seed, kBatchStream);
    minimize_phase(ref, data, warmup_steps(cfg, src->size()), cfg.lr, cfg.batch, batch);
    for (std::size_t it = 1; it <= cfg.k; ++it) {
      std::vector<AdversarialExample> dup;
      for (std::size_t i : draw_without_replacement(origins, src->size(), cfg.batch)) dup.push_back({(*src)[i], i, it, 0.0});
      data.append(std::move(dup));
      minimize_phase(ref, data, cfg.t_min, cfg.lr, cfg.batch, batch);
    }
    c.expect(encode_tensors(m.model.embed_params) == encode_tensors(ref.embed_params) &&
                 encode_tensors(m.model.classifier_params) == encode_tensors(ref.classifier_params),
             "parameters differ for seed " + std::to_string(seed));
    c.expect(m.augmented_size - m.source_size == cfg.k * cfg.batch, "accounting off for seed " + std::to_string(seed));
  }
  return {c.ok(), "3 seeds bit-identical, growth k*batch = 24" + (c.ok() ? "" : "; " + c.failure())};
}

Outcome determinism() {
  Checker c;
  testutil::TempDir dir("acceptance_det");
  const auto samples = generate_dataset(default_domains(10), 4, 0.5, 31);
  fs::create_directories(dir.path() / "data");
  for (std::size_t i = 0; i < samples.size(); ++i) write_sample_file(dir.path() / "data" / sample_filename(samples[i], i), samples[i]);
  const std::string base =
      "data_dir = data\nholdout = 2\nvalidation_fraction = 0.5\nrho_grid = 0.001, 0.01, 0.1, 1, 4\n"
      "k = 2\nt_adv = 3\nt_min = 3\nbatch = 8\nlr = 0.02\nepochs_warmup = 2\nseed = 8\n";
  write_file_text(dir.path() / "one.cfg", base + "threads = 1\n");
  write_file_text(dir.path() / "four.cfg", base + "threads = 4\n");
  run_experiment(dir.path() / "one.cfg", dir.path() / "a");
  run_experiment(dir.path() / "one.cfg", dir.path() / "b");
  run_experiment(dir.path() / "four.cfg", dir.path() / "c");
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir.path() / "a")) {
    if (!e.is_regular_file()) continue;
    ++files;
    const auto rel = fs::relative(e.path(), dir.path() / "a");
    const auto bytes = slurp(e.path());
    c.expect(bytes == slurp(dir.path() / "b" / rel), rel.string() + " differs between runs");
    c.expect(bytes == slurp(dir.path() / "c" / rel), rel.string() + " differs with 4 threads");
  }
  c.expect(files == 17, "expected 17 output files, got " + std::to_string(files));
  return {c.ok(), std::to_string(files) + " files identical across 3 runs (threads 1, 1, 4)" + (c.ok() ? "" : "; " + c.failure())};
}

Outcome domain_shift() {
  const auto t0 = std::chrono::steady_clock::now();
  TrainConfig tc;
  tc.rho_grid = {0.1, 1.0, 4.0};
  tc.k = 20;
  tc.batch = 16;
  tc.t_adv = 15;
  tc.eta_adv = 1.0;
  tc.t_min = 100;
  tc.lr = 0.02;
  tc.epochs_warmup = 100;
  std::vector<double> ada_test, erm_test, erm_val;
  for (std::uint64_t s = 0; s < 5; ++s) {
    std::vector<DomainParams> doms;
    for (std::uint16_t d = 0; d < 9; ++d) doms.push_back({d, 1.0, 0.05, 0.5, 0.0});
    doms.push_back({9, 1.6, 0.15, 0.5, 0.0});
    const auto samples = generate_dataset(doms, 20, 0.5, 1000 + s);

    ExperimentConfig cfg;
    cfg.holdout = 9;
    cfg.model = CnnConfig::reduced();
    cfg.train = tc;
    cfg.train.seed = 77 + s;
    const auto ada = run_experiment(cfg, samples).report;
    cfg.train.k = 0;
    cfg.train.rho_grid = {1.0};
    const auto erm = run_experiment(cfg, samples).report;

    ada_test.push_back(ada.members.at(ada.selected.value()).test.accuracy);
    erm_test.push_back(erm.members[0].test.accuracy);
    erm_val.push_back(erm.members[0].validation.value().accuracy);
  }
  const double secs = seconds_since(t0);
  const double ada_med = median(ada_test), erm_med = median(erm_test), val_med = median(erm_val);
  Checker c;
  c.expect(val_med >= 0.9, "ERM validation median " + fmt("%.3f", val_med));
  c.expect(ada_med >= erm_med + 0.03, "ADA median not 3 pp above ERM");
  c.expect(secs < 300.0, "runtime " + fmt("%.0f", secs) + " s");
  return {c.ok(), "median held-out ADA " + fmt("%.3f", ada_med) + " vs ERM " + fmt("%.3f", erm_med) +
                      " (needs +0.030), ERM validation " + fmt("%.3f", val_med) + ", " + fmt("%.0f", secs) + " s" +
                      (c.ok() ? "" : "; " + c.failure())};
}

Outcome lodo_protocol() {
  Checker c;
  const auto samples = generate_dataset(default_domains(10), 6, 0.5, 55);
  const auto model = init_params(CnnConfig::reduced(), 1);
  std::vector<int> as_test(samples.size(), 0);
  for (std::uint16_t h = 0; h < 10; ++h) {
    const auto split = lodo_split<Sample>(samples, h, 9);
    std::set<std::uint16_t> train_d, test_d;
    for (auto i : split.train) train_d.insert(samples[i].domain_id);
    for (auto i : split.validation) train_d.insert(samples[i].domain_id);
    for (auto i : split.test) {
      test_d.insert(samples[i].domain_id);
      ++as_test[i];
    }
    for (auto d : test_d) c.expect(!train_d.contains(d), "domain overlap in rotation " + std::to_string(h));
    const auto test = to_examples(samples, split.test, model.config);
    const auto m = evaluate(model, test);
    c.expect(m.confusion.total() == split.test.size(), "confusion total in rotation " + std::to_string(h));
    const ModelState* one[] = {&model};
    c.expect(evaluate_vote(one, test).confusion.total() == split.test.size(), "vote total in rotation " + std::to_string(h));
  }
  for (int n : as_test) c.expect(n == 1, "sample tested " + std::to_string(n) + " times");
  return {c.ok(), "10 rotations over " + std::to_string(samples.size()) + " samples" + (c.ok() ? "" : "; " + c.failure())};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"gradient suite", gradient_suite},
      {"parser round trip", parser_round_trip},
      {"preprocessing conformance", preprocessing},
      {"surrogate identities", surrogate_identities},
      {"penalty limit", penalty_limit},
      {"ERM reduction", erm_reduction},
      {"determinism", determinism},
      {"domain-shift direction", domain_shift},
      {"LODO protocol", lodo_protocol},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("[%s] %zu %s (%.1f s): %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, seconds_since(t0),
                o.detail.c_str());
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
