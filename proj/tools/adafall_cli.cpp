// adafall: command-line front end for synthesis, ingestion, training,
// evaluation, gradient checks and report rendering.
//
// Exit codes: 0 success, 1 validation failure, 2 IO or configuration error.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "adafall/adafall.hpp"

namespace fs = std::filesystem;
using namespace adafall;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitIo = 2;

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create " + dir.string() + ": " + ec.message());
}

void write_report_files(const fs::path& out_dir, const EvalReport& r) {
  ensure_dir(out_dir);
  write_file_text(out_dir / "report.jsonl", report_jsonl(r));
  write_file_text(out_dir / "report.tsv", report_table(r));
}

struct SynthArgs {
  std::size_t domains = 10;
  std::size_t per_domain = 20;
  double fall_fraction = 0.5;
  std::uint64_t seed = 0;
  std::string out;
  std::string config;
  std::string format = "csiw";
  std::size_t threads = 1;
};

int run_synth(const SynthArgs& a, const CLI::App& cmd) {
  std::vector<DomainParams> domains = default_domains(a.domains);
  std::size_t per_domain = a.per_domain;
  double fall_fraction = a.fall_fraction;
  if (!a.config.empty()) {
    const auto cfg = load_config(a.config);
    if (!cfg.domains.empty()) domains = cfg.domains;
    if (cmd.count("--per-domain") == 0) per_domain = cfg.per_domain;
    if (cmd.count("--fall-fraction") == 0) fall_fraction = cfg.fall_fraction;
  }
  ensure_dir(a.out);

  if (a.format == "csiw") {
    const auto samples = generate_dataset(domains, per_domain, fall_fraction, a.seed, a.threads);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      write_sample_file(fs::path(a.out) / sample_filename(samples[i], i), samples[i]);
    }
    std::printf("wrote %zu samples to %s\n", samples.size(), a.out.c_str());
    return kExitOk;
  }

  // Raw streams, one 10 s recording per file, labelled like generate_dataset.
  const auto n_fall = static_cast<std::size_t>(std::llround(fall_fraction * static_cast<double>(per_domain)));
  std::size_t written = 0;
  for (const auto& d : domains) {
    for (std::size_t j = 0; j < per_domain; ++j) {
      const bool fall = (j + 1) * n_fall / per_domain > j * n_fall / per_domain;
      const auto label = static_cast<std::uint8_t>(fall ? 1 : 0);
      const auto records = generate_stream(d, label, kWindowSeconds, mix_seed(a.seed, d.domain_id, j));
      char name[64];
      std::snprintf(name, sizeof name, "d%03u_%05zu_y%u.csir", static_cast<unsigned>(d.domain_id), j,
                    static_cast<unsigned>(label));
      write_file_bytes(fs::path(a.out) / name, encode_record_stream(records));
      ++written;
    }
  }
  std::printf("wrote %zu streams to %s\n", written, a.out.c_str());
  return kExitOk;
}

int run_ingest(const std::string& in, const std::string& out, unsigned label, unsigned domain_id) {
  if (label > 1) throw Error(ErrorCode::BadLabel, "label must be 0 or 1");
  if (domain_id > 0xFFFF) throw Error(ErrorCode::InvalidArgument, "domain id out of range");
  const auto bytes = read_file_bytes(in);
  const auto records = parse_record_stream(bytes);
  const auto samples = records_to_samples(records, static_cast<std::uint8_t>(label),
                                          static_cast<std::uint16_t>(domain_id));
  ensure_dir(out);
  const std::string stem = fs::path(in).stem().string();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    char suffix[32];
    std::snprintf(suffix, sizeof suffix, "_w%03zu.csiw", i);
    write_sample_file(fs::path(out) / (stem + suffix), samples[i]);
  }
  std::printf("%zu records -> %zu samples\n", records.size(), samples.size());
  return kExitOk;
}

int run_gradcheck(std::size_t n_seeds) {
  std::vector<std::uint64_t> seeds;
  for (std::size_t s = 0; s < n_seeds; ++s) seeds.push_back(s + 1);
  bool ok = true;
  std::printf("%-28s %6s %14s %10s  %s\n", "op", "seed", "max_rel_err", "tol", "status");
  for (const auto& e : run_gradient_suite(seeds)) {
    ok = ok && e.passed();
    std::printf("%-28s %6llu %14.3e %10.0e  %s\n", e.name.c_str(), static_cast<unsigned long long>(e.seed),
                e.result.max_rel_error, e.tolerance, e.passed() ? "ok" : "FAIL");
  }
  return ok ? kExitOk : kExitValidation;
}

// Binary PPM, viridis-like ramp from dark blue to yellow, one pixel per cell.
void write_heatmap(const Sample& s, const fs::path& path, std::size_t scale) {
  const auto [lo_it, hi_it] = std::minmax_element(s.data.values.begin(), s.data.values.end());
  const double lo = *lo_it;
  const double span = std::max(1e-12, static_cast<double>(*hi_it) - lo);
  const std::size_t w = s.data.cols * scale;
  const std::size_t h = s.data.rows;
  std::string img = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  img.reserve(img.size() + w * h * 3);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const double v = (s.data(r, c / scale) - lo) / span;
      img.push_back(static_cast<char>(std::lround(255.0 * std::clamp(1.8 * v - 0.6, 0.0, 1.0))));
      img.push_back(static_cast<char>(std::lround(255.0 * std::clamp(0.1 + 0.85 * v, 0.0, 1.0))));
      img.push_back(static_cast<char>(std::lround(255.0 * std::clamp(0.5 - 0.5 * v + 0.2 * (v < 0.3), 0.0, 1.0))));
    }
  }
  write_file_text(path, img);
}

int run_report(const std::string& in, const std::string& sample, const std::string& ppm, std::size_t scale) {
  if (!in.empty()) {
    const auto bytes = read_file_bytes(in);
    const auto r = parse_report_jsonl(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
    std::printf("holdout %s  model %s  train %zu  validation %zu  test %zu\n\n",
                r.holdout ? std::to_string(*r.holdout).c_str() : "-", r.model.c_str(), r.train_size,
                r.validation_size, r.test_size);
    std::printf("%-8s %8s %10s %8s %8s %9s %11s %5s %5s %5s %5s\n", "member", "rho", "gamma", "val_acc", "acc",
                "precision", "false_alarm", "tp", "tn", "fp", "fn");
    auto line = [](const std::string& tag, const MemberRow* m, const Metrics& t) {
      const auto& c = t.confusion;
      std::printf("%-8s %8s %10s %8s %8.4f %9.4f %11.4f %5zu %5zu %5zu %5zu\n", tag.c_str(),
                  m ? detail::fmt("%g", m->rho).c_str() : "-", m ? detail::fmt("%g", m->gamma).c_str() : "-",
                  m && m->validation ? detail::fmt("%.4f", m->validation->accuracy).c_str() : "-", t.accuracy,
                  t.precision, t.false_alarm, c.tp, c.tn, c.fp, c.fn);
    };
    for (const auto& m : r.members) line(std::to_string(m.index), &m, m.test);
    if (r.selected) line("selected", &r.members.at(*r.selected), r.members.at(*r.selected).test);
    line("vote", nullptr, r.vote);
  }
  if (!sample.empty()) {
    if (ppm.empty()) throw Error(ErrorCode::Config, "--sample needs --ppm");
    const auto s = read_sample_file(sample);
    write_heatmap(s, ppm, std::max<std::size_t>(1, scale));
    std::printf("heatmap %zux%zu (label %u, domain %u) -> %s\n", s.data.rows, s.data.cols,
                static_cast<unsigned>(s.label), static_cast<unsigned>(s.domain_id), ppm.c_str());
  }
  if (in.empty() && sample.empty()) throw Error(ErrorCode::Config, "report needs --in and/or --sample");
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial domain augmentation for WiFi CSI fall detection"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "generate synthetic CSIW samples or CSIR streams");
  synth_cmd->add_option("--domains", synth.domains, "number of default domains")->capture_default_str();
  synth_cmd->add_option("--per-domain", synth.per_domain, "samples per domain")->capture_default_str();
  synth_cmd->add_option("--fall-fraction", synth.fall_fraction, "share of fall samples")->capture_default_str();
  synth_cmd->add_option("--seed", synth.seed)->capture_default_str();
  synth_cmd->add_option("--out", synth.out, "output directory")->required();
  synth_cmd->add_option("--config", synth.config, "take domain.<id>.* parameters from a config file");
  synth_cmd->add_option("--format", synth.format)->check(CLI::IsMember({"csiw", "csir"}))->capture_default_str();
  synth_cmd->add_option("--threads", synth.threads)->capture_default_str();

  std::string ingest_in, ingest_out;
  unsigned ingest_label = 0, ingest_domain = 0;
  auto* ingest_cmd = app.add_subcommand("ingest", "convert a CSIR stream into CSIW samples");
  ingest_cmd->add_option("--in", ingest_in)->required();
  ingest_cmd->add_option("--out", ingest_out)->required();
  ingest_cmd->add_option("--label", ingest_label)->required();
  ingest_cmd->add_option("--domain-id", ingest_domain)->required();

  std::string train_config, train_out;
  auto* train_cmd = app.add_subcommand("train", "run a leave-one-domain-out experiment");
  train_cmd->add_option("--config", train_config)->required();
  train_cmd->add_option("--out", train_out)->required();

  std::string eval_ckpt, eval_data, eval_out;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate saved members on a sample directory");
  eval_cmd->add_option("--checkpoint-dir", eval_ckpt)->required();
  eval_cmd->add_option("--data", eval_data)->required();
  eval_cmd->add_option("--out", eval_out)->required();

  std::size_t grad_seeds = 5;
  auto* grad_cmd = app.add_subcommand("gradcheck", "compare analytic and numeric gradients");
  grad_cmd->add_option("--seeds", grad_seeds)->capture_default_str();

  std::string report_in, report_sample, report_ppm;
  std::size_t report_scale = 4;
  auto* report_cmd = app.add_subcommand("report", "pretty-print a report or render a sample heatmap");
  report_cmd->add_option("--in", report_in, "report.jsonl");
  report_cmd->add_option("--sample", report_sample, "CSIW sample to render");
  report_cmd->add_option("--ppm", report_ppm, "heatmap output path");
  report_cmd->add_option("--scale", report_scale, "horizontal pixels per column")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitIo;
  }

  try {
    if (*synth_cmd) return run_synth(synth, *synth_cmd);
    if (*ingest_cmd) return run_ingest(ingest_in, ingest_out, ingest_label, ingest_domain);
    if (*train_cmd) {
      const auto r = run_experiment(fs::path(train_config), fs::path(train_out));
      std::cout << report_table(r);
      return kExitOk;
    }
    if (*eval_cmd) {
      const auto r = evaluate_checkpoints(eval_ckpt, eval_data);
      write_report_files(eval_out, r);
      std::cout << report_table(r);
      return kExitOk;
    }
    if (*grad_cmd) return run_gradcheck(grad_seeds);
    if (*report_cmd) return run_report(report_in, report_sample, report_ppm, report_scale);
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error [io]: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  return kExitValidation;
}
