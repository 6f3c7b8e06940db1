#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <sys/wait.h>

#include "test_util.hpp"

using namespace adafall;
namespace fs = std::filesystem;

namespace {

struct Tag {
  std::uint16_t domain_id = 0;
  std::uint8_t label = 0;
};

std::vector<Tag> tags(std::size_t domains, std::size_t per_domain) {
  std::vector<Tag> out;
  for (std::size_t d = 0; d < domains; ++d)
    for (std::size_t j = 0; j < per_domain; ++j) out.push_back({static_cast<std::uint16_t>(d), static_cast<std::uint8_t>(j % 3 == 0)});
  return out;
}

// A reduced CNN that predicts `label` for every input.
ModelState constant_model(std::size_t label) {
  auto m = init_params(CnnConfig::reduced(), 1);
  for (std::size_t i = 0; i < m.param_tensor_count(); ++i)
    for (auto& v : m.param(i).values) v = 0.0f;
  m.param(7).values[label] = 1.0f;
  return m;
}

std::vector<Example> examples_with(std::vector<std::uint8_t> labels) {
  std::vector<Example> out;
  for (auto y : labels) out.push_back({Tensor({10, 6}, 1.0f), y});
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(ADAFALL_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

constexpr const char* kSmallConfig =
    "# small end-to-end run\n"
    "data_dir = data\n"
    "holdout = 3\n"
    "validation_fraction = 0.5\n"
    "model = cnn\n"
    "profile = reduced\n"
    "rho_grid = 0.001, 0.01, 0.1, 1, 4\n"
    "k = 2\n"
    "t_adv = 3\n"
    "t_min = 3\n"
    "batch = 8\n"
    "lr = 0.02\n"
    "epochs_warmup = 2\n"
    "seed = 21\n";

// Ten synthetic domains, 4 samples each, written once per test binary.
class Experiment : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new testutil::TempDir("experiment");
    samples_ = new std::vector<Sample>(generate_dataset(default_domains(10), 4, 0.5, 12));
    fs::create_directories(dir_->path() / "data");
    for (std::size_t i = 0; i < samples_->size(); ++i) {
      write_sample_file(dir_->path() / "data" / sample_filename((*samples_)[i], i), (*samples_)[i]);
    }
    write_file_text(dir_->path() / "run.cfg", kSmallConfig);
  }
  static void TearDownTestSuite() {
    delete samples_;
    delete dir_;
  }
  static fs::path root() { return dir_->path(); }

  static testutil::TempDir* dir_;
  static std::vector<Sample>* samples_;
};

testutil::TempDir* Experiment::dir_ = nullptr;
std::vector<Sample>* Experiment::samples_ = nullptr;

}  // namespace

// --- lodo_split -------------------------------------------------------------

TEST(LodoSplit, NineTrainingDomains) {
  const auto t = tags(10, 20);
  const auto s = lodo_split<Tag>(t, 9, 1);
  std::set<std::uint16_t> train_domains, val_domains;
  for (auto i : s.train) train_domains.insert(t[i].domain_id);
  for (auto i : s.validation) val_domains.insert(t[i].domain_id);
  EXPECT_EQ(train_domains.size(), 9u);
  EXPECT_FALSE(train_domains.contains(9));
  EXPECT_FALSE(val_domains.contains(9));
  EXPECT_EQ(s.test.size(), 20u);
  for (auto i : s.test) EXPECT_EQ(t[i].domain_id, 9);
  EXPECT_EQ(s.holdout, 9);
}

TEST(LodoSplit, StratifiedValidationAndPartition) {
  const auto t = tags(4, 30);  // per domain: 10 falls, 20 non-falls
  const auto s = lodo_split<Tag>(t, 0, 5);
  std::map<std::pair<int, int>, int> val;
  for (auto i : s.validation) ++val[{t[i].domain_id, t[i].label}];
  for (int d = 1; d < 4; ++d) {
    EXPECT_EQ((val[{d, 1}]), 1);
    EXPECT_EQ((val[{d, 0}]), 2);
  }
  std::vector<int> seen(t.size(), 0);
  for (const auto* part : {&s.train, &s.validation, &s.test})
    for (auto i : *part) ++seen[i];
  for (int c : seen) EXPECT_EQ(c, 1);
  EXPECT_EQ(lodo_split<Tag>(t, 0, 5).validation, s.validation);
}

TEST(LodoSplit, Errors) {
  const auto t = tags(3, 4);
  try {
    lodo_split<Tag>(t, 7, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnknownDomain);
  }
  try {
    lodo_split<Tag>(tags(1, 4), 0, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SingleDomain);
  }
}

TEST(LodoSplit, RotationCoversEverySampleOnce) {
  const auto t = tags(10, 7);
  std::vector<int> as_test(t.size(), 0);
  for (std::uint16_t h = 0; h < 10; ++h) {
    const auto s = lodo_split<Tag>(t, h, 3);
    std::set<std::uint16_t> train_d, test_d;
    for (auto i : s.train) train_d.insert(t[i].domain_id);
    for (auto i : s.validation) train_d.insert(t[i].domain_id);
    for (auto i : s.test) {
      test_d.insert(t[i].domain_id);
      ++as_test[i];
    }
    for (auto d : test_d) EXPECT_FALSE(train_d.contains(d));
  }
  for (int c : as_test) EXPECT_EQ(c, 1);
}

// --- metrics, selection, voting ---------------------------------------------

TEST(Evaluate, PerfectAndAllWrong) {
  const auto ones = examples_with({1, 1, 1});
  const auto m1 = evaluate(constant_model(1), ones);
  EXPECT_EQ(m1.accuracy, 1.0);
  EXPECT_EQ(m1.precision, 1.0);
  EXPECT_EQ(m1.confusion.tp, 3u);

  const auto zeros = examples_with({0, 0, 0, 0});
  const auto m0 = evaluate(constant_model(1), zeros);
  EXPECT_EQ(m0.accuracy, 0.0);
  EXPECT_EQ(m0.false_alarm, 1.0);
  EXPECT_EQ(m0.confusion.total(), 4u);

  EXPECT_THROW(evaluate(constant_model(0), std::vector<Example>{}), Error);
}

TEST(Evaluate, TiedLogitsPredictClassZero) {
  auto m = constant_model(0);
  m.param(7).values = {0.0f, 0.0f};
  EXPECT_EQ(predict_label(m, Tensor({10, 6}, 1.0f)), 0u);
}

TEST(Metrics, EmptyDenominatorsAreZeroAndCountsConserve) {
  const auto m = metrics_from(Confusion{0, 0, 0, 0});
  EXPECT_EQ(m.accuracy, 0.0);
  EXPECT_EQ(m.precision, 0.0);
  EXPECT_EQ(m.false_alarm, 0.0);
  Rng rng(2, 0);
  for (int trial = 0; trial < 50; ++trial) {
    Confusion c;
    const std::size_t n = 1 + rng.below(40);
    for (std::size_t i = 0; i < n; ++i) c.add(rng.below(2), rng.below(2));
    const auto r = metrics_from(c);
    EXPECT_EQ(c.total(), n);
    for (double v : {r.accuracy, r.precision, r.false_alarm}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(SelectModel, Examples) {
  EXPECT_EQ(select_model(std::vector<double>{0.4}), 0u);
  EXPECT_EQ(select_model(std::vector<double>{0.6, 0.9, 0.7}), 1u);
  EXPECT_EQ(select_model(std::vector<double>{0.9, 0.5, 0.9}), 0u);
  try {
    select_model(std::vector<double>{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyEnsemble);
  }
}

TEST(SelectModel, InvariantUnderMonotoneTransform) {
  Rng rng(6, 0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> acc(1 + rng.below(6));
    for (auto& a : acc) a = static_cast<double>(rng.below(5)) / 4.0;
    std::vector<double> t1, t2;
    for (double a : acc) {
      t1.push_back(std::exp(3 * a) - 7);
      t2.push_back(a * a * a + a);
    }
    EXPECT_EQ(select_model(acc), select_model(t1));
    EXPECT_EQ(select_model(acc), select_model(t2));
  }
}

TEST(SelectModel, UsesValidationAccuracy) {
  Ensemble e;
  for (std::size_t label : {0u, 1u, 1u}) e.members.push_back({constant_model(label), 1.0, 1.0, {}, 0, 0, 0});
  EXPECT_EQ(select_model(e, examples_with({1, 1, 0})), 1u);
  EXPECT_EQ(select_model(e, examples_with({0, 0, 1})), 0u);
}

TEST(Vote, MajorityRules) {
  EXPECT_EQ(majority_vote(std::vector<std::size_t>{1, 1, 1}), 1u);
  EXPECT_EQ(majority_vote(std::vector<std::size_t>{0, 0}), 0u);
  EXPECT_EQ(majority_vote(std::vector<std::size_t>{1, 0, 1, 0, 1}), 1u);
  EXPECT_EQ(majority_vote(std::vector<std::size_t>{0, 1, 0, 1, 0}), 0u);
  EXPECT_EQ(majority_vote(std::vector<std::size_t>{1, 1, 0, 0}), 0u);
  EXPECT_THROW(majority_vote(std::vector<std::size_t>{}), Error);

  Ensemble e;
  for (std::size_t label : {1u, 0u, 1u}) e.members.push_back({constant_model(label), 1.0, 1.0, {}, 0, 0, 0});
  EXPECT_EQ(ensemble_vote(e, Tensor({10, 6}, 1.0f)), 1u);
  e.members.push_back({constant_model(0), 1.0, 1.0, {}, 0, 0, 0});
  EXPECT_EQ(ensemble_vote(e, Tensor({10, 6}, 1.0f)), 0u);
  EXPECT_THROW(ensemble_vote(Ensemble{}, Tensor({10, 6})), Error);
}

// --- config ----------------------------------------------------------------

TEST(Config, ParsesEveryKey) {
  const auto cfg = parse_config(
      "data_dir = samples  # relative\n"
      "holdout = 4\nvalidation_fraction = 0.2\nmodel = cnn\nprofile = reduced\n"
      "input_rows = 20\ninput_cols = 12\nconv1_maps = 4\nconv2_maps = 6\nkernel = 3\nfc1_width = 5\n"
      "rho_grid = 0.5, 2\ngamma_scale = 3\nk = 7\nt_adv = 2\neta_adv = 0.25\nt_min = 9\nlr = 0.125\n"
      "batch = 3\nepochs_warmup = 4\nseed = 99\nthreads = 2\nper_domain = 6\nfall_fraction = 0.25\n"
      "domain.2.gain = 1.6\ndomain.2.noise_std = 0.15\ndomain.2.burst_freq_hz = 2\ndomain.2.smoothing = 0.1\n"
      "domain.0.gain = 1.0\n",
      "/base");
  EXPECT_EQ(cfg.data_dir, fs::path("/base/samples"));
  EXPECT_EQ(cfg.holdout, 4);
  EXPECT_EQ(cfg.validation_fraction, 0.2);
  EXPECT_EQ(std::get<CnnConfig>(cfg.model), (CnnConfig{20, 12, 4, 6, 3, 5, 2}));
  EXPECT_EQ(cfg.train.rho_grid, (std::vector<double>{0.5, 2}));
  EXPECT_EQ(cfg.train.gamma_scale, 3);
  EXPECT_EQ(cfg.train.k, 7u);
  EXPECT_EQ(cfg.train.t_adv, 2u);
  EXPECT_EQ(cfg.train.eta_adv, 0.25);
  EXPECT_EQ(cfg.train.t_min, 9u);
  EXPECT_EQ(cfg.train.lr, 0.125);
  EXPECT_EQ(cfg.train.batch, 3u);
  EXPECT_EQ(cfg.train.epochs_warmup, 4u);
  EXPECT_EQ(cfg.train.seed, 99u);
  EXPECT_EQ(cfg.train.threads, 2u);
  EXPECT_EQ(cfg.per_domain, 6u);
  EXPECT_EQ(cfg.fall_fraction, 0.25);
  ASSERT_EQ(cfg.domains.size(), 2u);
  EXPECT_EQ(cfg.domains[0].domain_id, 0);
  EXPECT_EQ(cfg.domains[1].domain_id, 2);
  EXPECT_EQ(cfg.domains[1].gain, 1.6);
  EXPECT_EQ(cfg.domains[1].noise_std, 0.15);
  EXPECT_EQ(cfg.domains[1].burst_freq_hz, 2);
  EXPECT_EQ(cfg.domains[1].smoothing, 0.1);

  const auto lstm = parse_config("model = lstm\nprofile = full\nlstm_hidden = 16\n");
  EXPECT_EQ(std::get<LstmConfig>(lstm.model), (LstmConfig{500, 60, 16, 2}));
  EXPECT_EQ(std::get<CnnConfig>(parse_config("").model), CnnConfig::reduced());
}

TEST(Config, RejectsBadInput) {
  for (const char* text : {"bogus = 1\n", "k = 1\nk = 2\n", "k = -3\n", "lr = fast\n", "no equals sign\n",
                           "model = rnn\n", "profile = tiny\n", "domain.1.colour = 3\n", "domain.x.gain = 1\n",
                           "rho_grid = 1, 0.5\n", "domain.1.smoothing = 1.0\n", "batch = 0\n", "kernel = 4\n",
                           "model = lstm\nconv1_maps = 3\n"}) {
    try {
      parse_config(text);
      ADD_FAILURE() << "accepted: " << text;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::Config) << text;
      EXPECT_EQ(exit_code_for(e.code()), 2);
    }
  }
  EXPECT_THROW(load_config("/nonexistent/run.cfg"), Error);
}

// --- reports -----------------------------------------------------------------

TEST(Report, JsonlRoundTripAndTable) {
  EvalReport r;
  r.holdout = 3;
  r.model = "cnn";
  r.train_size = 30;
  r.validation_size = 6;
  r.test_size = 4;
  r.members.push_back({0, 0.1, 10, Metrics{{}, 0.5, 0, 0}, metrics_from({1, 1, 1, 1})});
  r.members.push_back({1, 4, 0.25, Metrics{{}, 0.75, 0, 0}, metrics_from({2, 2, 0, 0})});
  r.selected = 1;
  r.vote = metrics_from({2, 1, 1, 0});
  const auto back = parse_report_jsonl(report_jsonl(r));
  EXPECT_EQ(back.holdout, 3);
  EXPECT_EQ(back.members.size(), 2u);
  EXPECT_EQ(back.selected, 1u);
  EXPECT_EQ(back.members[1].test.confusion.tp, 2u);
  EXPECT_EQ(back.members[0].validation->accuracy, 0.5);
  EXPECT_EQ(report_jsonl(back), report_jsonl(r));

  const auto table = report_table(r);
  EXPECT_NE(table.find("row\tmember\trho\tgamma\tval_accuracy\taccuracy\tprecision\tfalse_alarm\ttp\ttn\tfp\tfn\n"),
            std::string::npos);
  EXPECT_NE(table.find("selected\t1\t4\t0.25\t0.750000\t1.000000"), std::string::npos);
  EXPECT_NE(table.find("ensemble_vote\t"), std::string::npos);
  EXPECT_THROW(parse_report_jsonl("{not json\n"), Error);
}

// --- end to end ----------------------------------------------------------------

TEST_F(Experiment, InMemoryRunProducesFiveRowsAndSelection) {
  auto cfg = load_config(root() / "run.cfg");
  const auto out = run_experiment(cfg, *samples_);
  const auto& r = out.report;
  ASSERT_EQ(r.members.size(), 5u);
  ASSERT_TRUE(r.selected.has_value());
  EXPECT_EQ(r.test_size, 4u);
  EXPECT_EQ(r.validation_size, 18u);
  EXPECT_EQ(r.train_size, 18u);
  for (const auto& m : r.members) {
    EXPECT_EQ(m.test.confusion.total(), r.test_size);
    EXPECT_DOUBLE_EQ(m.gamma, 1.0 / m.rho);
  }
  EXPECT_EQ(r.vote.confusion.total(), r.test_size);
  for (auto i : out.split.test) EXPECT_EQ((*samples_)[i].domain_id, 3);
}

TEST_F(Experiment, FileRunIsDeterministicAndEvaluable) {
  const fs::path a = root() / "out_a", b = root() / "out_b";
  const auto ra = run_experiment(root() / "run.cfg", a);
  run_experiment(root() / "run.cfg", b);
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), a));
  }
  EXPECT_EQ(files.size(), 2u + 5u + 10u);
  for (const auto& f : files) EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  EXPECT_EQ(slurp(a / "report.tsv"), report_table(ra));

  const auto ev = evaluate_checkpoints(a / "checkpoints", root() / "data");
  ASSERT_EQ(ev.members.size(), 5u);
  EXPECT_EQ(ev.test_size, samples_->size());
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(ev.members[i].rho, ra.members[i].rho);
}

TEST_F(Experiment, MissingSampleDirectoryWritesNothing) {
  std::string text = kSmallConfig;
  text.replace(text.find("data_dir = data"), 15, "data_dir = nowhere");
  write_file_text(root() / "missing.cfg", text);
  const fs::path out = root() / "out_missing";
  try {
    run_experiment(root() / "missing.cfg", out);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(exit_code_for(e.code()), 2);
  }
  EXPECT_FALSE(fs::exists(out / "report.jsonl"));
  EXPECT_FALSE(fs::exists(out / "report.tsv"));

  EXPECT_EQ(run_cli("train --config " + (root() / "missing.cfg").string() + " --out " + out.string()), 2);
  EXPECT_FALSE(fs::exists(out / "report.jsonl"));
}

TEST_F(Experiment, CliSubcommands) {
  const fs::path r = root();
  EXPECT_EQ(run_cli("gradcheck --seeds 1"), 0);
  EXPECT_EQ(run_cli("no-such-command"), 2);
  EXPECT_EQ(run_cli("train --config " + (r / "absent.cfg").string() + " --out " + (r / "x").string()), 2);

  write_file_text(r / "bad.cfg", "frobnicate = 1\n");
  EXPECT_EQ(run_cli("train --config " + (r / "bad.cfg").string() + " --out " + (r / "x").string()), 2);

  EXPECT_EQ(run_cli("synth --domains 2 --per-domain 1 --seed 3 --format csir --out " + (r / "streams").string()), 0);
  std::vector<fs::path> streams;
  for (const auto& e : fs::directory_iterator(r / "streams")) streams.push_back(e.path());
  ASSERT_EQ(streams.size(), 2u);
  std::sort(streams.begin(), streams.end());
  // Stream names end in _y<label>.csir.
  const std::string label(1, streams[0].stem().string().back());
  EXPECT_EQ(run_cli("ingest --in " + streams[0].string() + " --label " + label + " --domain-id 0 --out " +
                    (r / "ingested").string()),
            0);
  EXPECT_EQ(run_cli("ingest --in " + streams[0].string() + " --label 5 --domain-id 0 --out " + (r / "ingested").string()), 1);

  // Truncated stream is a validation failure.
  auto bytes = read_file_bytes(streams[0]);
  bytes.resize(bytes.size() / 2);
  write_file_bytes(r / "cut.csir", bytes);
  EXPECT_EQ(run_cli("ingest --in " + (r / "cut.csir").string() + " --label 0 --domain-id 0 --out " + (r / "cut").string()), 1);

  EXPECT_EQ(run_cli("synth --domains 2 --per-domain 1 --seed 3 --out " + (r / "samples").string()), 0);
  std::vector<fs::path> samples;
  for (const auto& e : fs::directory_iterator(r / "samples")) samples.push_back(e.path());
  ASSERT_EQ(samples.size(), 2u);
  std::sort(samples.begin(), samples.end());
  std::vector<fs::path> ingested;
  for (const auto& e : fs::directory_iterator(r / "ingested")) ingested.push_back(e.path());
  ASSERT_EQ(ingested.size(), 1u);
  EXPECT_EQ(read_sample_file(ingested[0]), read_sample_file(samples[0]));

  EXPECT_EQ(run_cli("report --sample " + samples[0].string() + " --ppm " + (r / "heat.ppm").string()), 0);
  const std::string ppm = slurp(r / "heat.ppm");
  EXPECT_EQ(ppm.rfind("P6\n240 500\n255\n", 0), 0u);
  EXPECT_EQ(ppm.size(), std::string("P6\n240 500\n255\n").size() + 240u * 500u * 3u);

  const fs::path out = r / "cli_run";
  EXPECT_EQ(run_cli("train --config " + (r / "run.cfg").string() + " --out " + out.string()), 0);
  EXPECT_EQ(run_cli("report --in " + (out / "report.jsonl").string()), 0);
  EXPECT_EQ(run_cli("eval --checkpoint-dir " + (out / "checkpoints").string() + " --data " + (r / "data").string() +
                    " --out " + (r / "cli_eval").string()),
            0);
  EXPECT_TRUE(fs::exists(r / "cli_eval" / "report.tsv"));
  EXPECT_EQ(run_cli("eval --checkpoint-dir " + (r / "nope").string() + " --data " + (r / "data").string() +
                    " --out " + (r / "cli_eval2").string()),
            2);
}
