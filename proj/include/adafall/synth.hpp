#pragma once

// Deterministic synthetic CSI streams with controllable domain shift.
//
// Per pair p, subcarrier s, time t (seconds, 1000 Hz):
//   a(t)  = gain * (1 + 0.1 * sin(2*pi*0.5*t + s))
//         + [label == 1, t >= t0] gain * exp(-(t - t0) / 0.5) * sin(2*pi*burst_freq_hz*t)
//         + noise_std * N(0, 1)
//   y(t)  = smoothing * y(t - 1ms) + (1 - smoothing) * a(t),  y(0) = a(0)
// with t0 = duration / 2. The complex response is y * exp(i * (0.1*s + 0.5*p)).
//
// Noise comes from Rng(mix_seed(seed, pair), subcarrier) (xoshiro256**), so a
// stream depends only on its arguments.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

#include "adafall/csi.hpp"
#include "adafall/parallel.hpp"
#include "adafall/rng.hpp"

namespace adafall {

struct DomainParams {
  std::uint16_t domain_id = 0;
  double gain = 1.0;
  double noise_std = 0.05;
  double burst_freq_hz = 0.5;
  double smoothing = 0.0;

  void validate() const {
    if (!(gain > 0.0) || !std::isfinite(gain)) throw Error(ErrorCode::InvalidArgument, "gain must be > 0");
    if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) {
      throw Error(ErrorCode::InvalidArgument, "noise_std must be >= 0");
    }
    if (!(burst_freq_hz > 0.0) || !std::isfinite(burst_freq_hz)) {
      throw Error(ErrorCode::InvalidArgument, "burst_freq_hz must be > 0");
    }
    if (!(smoothing >= 0.0 && smoothing < 1.0)) throw Error(ErrorCode::InvalidArgument, "smoothing must be in [0,1)");
  }
};

inline constexpr double kBaselineModulation = 0.1;
inline constexpr double kBaselineFreqHz = 0.5;
inline constexpr double kBurstDecaySeconds = 0.5;

/// Records are interleaved in time order: (t0, pair 0), (t0, pair 1), (t1, pair 0), ...
inline std::vector<CsiRecord> generate_stream(const DomainParams& params, std::uint8_t label, double duration_s,
                                              std::uint64_t seed) {
  params.validate();
  if (!(duration_s > 0.0)) throw Error(ErrorCode::InvalidArgument, "duration must be > 0");
  if (label > 1) throw Error(ErrorCode::BadLabel, "label " + std::to_string(label));

  const auto n = static_cast<std::size_t>(std::llround(duration_s * kSampleRateHz));
  const double t0 = duration_s / 2.0;
  const double two_pi = 2.0 * std::numbers::pi;

  std::vector<CsiRecord> records(n * kPairs);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < kPairs; ++p) {
      auto& r = records[i * kPairs + p];
      r.timestamp_us = static_cast<std::uint64_t>(i) * (1'000'000 / kSampleRateHz);
      r.pair_id = static_cast<std::uint8_t>(p);
    }
  }

  for (std::size_t p = 0; p < kPairs; ++p) {
    for (std::size_t s = 0; s < kSubcarriers; ++s) {
      Rng rng(mix_seed(seed, p), s);
      const double rot = 0.1 * static_cast<double>(s) + 0.5 * static_cast<double>(p);
      const double cos_rot = std::cos(rot);
      const double sin_rot = std::sin(rot);
      double y = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / kSampleRateHz;
        double a = params.gain *
                   (1.0 + kBaselineModulation * std::sin(two_pi * kBaselineFreqHz * t + static_cast<double>(s)));
        if (label == 1 && t >= t0) {
          a += params.gain * std::exp(-(t - t0) / kBurstDecaySeconds) * std::sin(two_pi * params.burst_freq_hz * t);
        }
        if (params.noise_std > 0.0) a += params.noise_std * rng.normal();
        y = (i == 0) ? a : params.smoothing * y + (1.0 - params.smoothing) * a;
        records[i * kPairs + p].subcarriers[s] = {static_cast<float>(y * cos_rot), static_cast<float>(y * sin_rot)};
      }
    }
  }
  return records;
}

/// Fall labels are spread evenly through each domain's block: sample j is a
/// fall when floor((j+1)*F/N) > floor(j*F/N) for F = round(fall_fraction*N).
inline std::vector<Sample> generate_dataset(std::span<const DomainParams> domains, std::size_t per_domain,
                                            double fall_fraction, std::uint64_t seed, std::size_t threads = 1) {
  if (!(fall_fraction >= 0.0 && fall_fraction <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "fall_fraction must be in [0,1]");
  }
  for (const auto& d : domains) d.validate();
  const auto n_fall = static_cast<std::size_t>(std::llround(fall_fraction * static_cast<double>(per_domain)));

  std::vector<Sample> out(domains.size() * per_domain);
  parallel_for(out.size(), threads, [&](std::size_t idx) {
    const auto& d = domains[idx / per_domain];
    const std::size_t j = idx % per_domain;
    const bool fall = (j + 1) * n_fall / per_domain > j * n_fall / per_domain;
    const auto label = static_cast<std::uint8_t>(fall ? 1 : 0);
    const auto records =
        generate_stream(d, label, static_cast<double>(kWindowSeconds), mix_seed(seed, d.domain_id, j));
    auto samples = records_to_samples(records, label, d.domain_id);
    if (samples.size() != 1) throw Error(ErrorCode::InvalidArgument, "expected exactly one window per stream");
    out[idx] = std::move(samples.front());
  });
  return out;
}

/// Ten-domain family used by the `synth` CLI: five "environments" with
/// increasing gain, each with an A/B subset differing in noise and smoothing.
inline std::vector<DomainParams> default_domains(std::size_t count = 10) {
  std::vector<DomainParams> out;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t env = i / 2;
    const bool subset_b = (i % 2) == 1;
    out.push_back(DomainParams{static_cast<std::uint16_t>(i), 1.0 + 0.15 * static_cast<double>(env),
                               subset_b ? 0.10 : 0.05, 0.5, subset_b ? 0.3 : 0.0});
  }
  return out;
}

}  // namespace adafall
