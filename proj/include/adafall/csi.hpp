#pragma once

// CSI ingestion: record streams, amplitude/phase extraction, windowing and
// downsampling into fixed 500x60 samples.
//
// CSIR stream (little-endian):
//   "CSIR" | u16 version=1 | u32 record_count |
//   record_count x [u64 timestamp_us | u8 pair_id | 30 x (f32 re, f32 im)]
//
// CSIW sample (little-endian):
//   "CSIW" | u16 version=1 | u8 label | u16 domain_id | u32 rows | u32 cols |
//   rows*cols f32, row-major

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <span>
#include <vector>

#include "adafall/binary_io.hpp"
#include "adafall/error.hpp"

namespace adafall {

inline constexpr std::size_t kSubcarriers = 30;
inline constexpr std::size_t kPairs = 2;
inline constexpr std::size_t kColumns = kPairs * kSubcarriers;
inline constexpr std::size_t kSampleRateHz = 1000;
inline constexpr std::size_t kWindowSeconds = 10;
inline constexpr std::size_t kWindowRows = kSampleRateHz * kWindowSeconds;
inline constexpr std::size_t kDownsampleFactor = 20;
inline constexpr std::size_t kSampleRows = kWindowRows / kDownsampleFactor;
inline constexpr std::size_t kRecordBytes = 8 + 1 + kSubcarriers * 8;
inline constexpr std::uint16_t kFormatVersion = 1;

static_assert(kRecordBytes == 249);
static_assert(kSampleRows == 500);

/// One timestamped CSI reading for one antenna pair.
struct CsiRecord {
  std::uint64_t timestamp_us = 0;
  std::uint8_t pair_id = 0;
  std::array<std::complex<float>, kSubcarriers> subcarriers{};

  bool operator==(const CsiRecord&) const = default;
};

/// Dense row-major float matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> values;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, float fill = 0.0f) : rows(r), cols(c), values(r * c, fill) {}

  float& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  float operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }

  bool operator==(const Matrix&) const = default;
};

/// 10 s of CSI at 1000 Hz: column j < 30 is pair 0 subcarrier j, column
/// j >= 30 is pair 1 subcarrier j - 30.
struct RawWindow {
  Matrix data;
  std::uint64_t start_us = 0;
};

/// A labeled 500x60 amplitude matrix. label 0 = no-fall, 1 = fall.
struct Sample {
  Matrix data;
  std::uint8_t label = 0;
  std::uint16_t domain_id = 0;

  bool operator==(const Sample&) const = default;
};

// ---------------------------------------------------------------------------
// CSIR record streams

inline void validate_record(const CsiRecord& r) {
  if (r.pair_id > 1) throw Error(ErrorCode::BadPairId, "pair_id " + std::to_string(r.pair_id));
  for (const auto& h : r.subcarriers) {
    if (!std::isfinite(h.real()) || !std::isfinite(h.imag())) {
      throw Error(ErrorCode::NonFinite, "record at t=" + std::to_string(r.timestamp_us));
    }
  }
}

inline std::vector<std::uint8_t> encode_record_stream(std::span<const CsiRecord> records) {
  ByteWriter w;
  w.put_bytes("CSIR");
  w.put_u16(kFormatVersion);
  w.put_u32(static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    w.put_u64(r.timestamp_us);
    w.put_u8(r.pair_id);
    for (const auto& h : r.subcarriers) {
      w.put_f32(h.real());
      w.put_f32(h.imag());
    }
  }
  return std::move(w).bytes();
}

inline std::vector<CsiRecord> parse_record_stream(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  in.expect_magic("CSIR");
  if (const auto version = in.u16(); version != kFormatVersion) {
    throw Error(ErrorCode::BadVersion, "CSIR version " + std::to_string(version));
  }
  const std::uint32_t count = in.u32();
  if (in.remaining() < std::size_t{count} * kRecordBytes) {
    throw Error(ErrorCode::Truncated, "header declares " + std::to_string(count) +
                                          " records, stream holds " +
                                          std::to_string(in.remaining() / kRecordBytes));
  }
  std::vector<CsiRecord> records(count);
  for (auto& r : records) {
    r.timestamp_us = in.u64();
    r.pair_id = in.u8();
    for (auto& h : r.subcarriers) {
      const float re = in.f32();
      const float im = in.f32();
      h = {re, im};
    }
    validate_record(r);
  }
  in.expect_end();
  return records;
}

// ---------------------------------------------------------------------------
// Amplitude / phase

inline std::array<float, kSubcarriers> amplitude(const CsiRecord& record) {
  std::array<float, kSubcarriers> out{};
  for (std::size_t i = 0; i < kSubcarriers; ++i) {
    const double re = record.subcarriers[i].real();
    const double im = record.subcarriers[i].imag();
    out[i] = static_cast<float>(std::sqrt(re * re + im * im));
  }
  return out;
}

/// Phase in (-pi, pi]. (0, 0) maps to 0; the -pi branch folds to +pi.
inline std::array<float, kSubcarriers> phase(const CsiRecord& record) {
  std::array<float, kSubcarriers> out{};
  for (std::size_t i = 0; i < kSubcarriers; ++i) {
    const double re = record.subcarriers[i].real();
    const double im = record.subcarriers[i].imag();
    if (re == 0.0 && im == 0.0) continue;
    double p = std::atan2(im, re);
    if (p <= -std::numbers::pi) p = std::numbers::pi;
    out[i] = static_cast<float>(p);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Windowing

namespace detail {

struct PairSeries {
  std::vector<std::uint64_t> t;
  std::vector<std::array<float, kSubcarriers>> amp;
};

}  // namespace detail

/// Resample both pairs onto a uniform rate_hz grid (linear interpolation),
/// cut into consecutive non-overlapping windows of window_seconds and
/// concatenate pair 0 | pair 1 column-wise. The grid starts at the later of
/// the two pairs' first timestamps and never extrapolates past either pair's
/// last timestamp; a trailing partial window is dropped.
inline std::vector<RawWindow> build_windows(std::span<const CsiRecord> records,
                                            std::size_t rate_hz = kSampleRateHz,
                                            std::size_t window_seconds = kWindowSeconds) {
  if (records.empty()) throw Error(ErrorCode::EmptyInput, "no records");
  if (rate_hz == 0 || window_seconds == 0) {
    throw Error(ErrorCode::InvalidArgument, "rate and window length must be positive");
  }

  std::array<detail::PairSeries, kPairs> series;
  for (const auto& r : records) {
    validate_record(r);
    auto& s = series[r.pair_id];
    if (!s.t.empty() && r.timestamp_us < s.t.back()) {
      throw Error(ErrorCode::Unsorted, "pair " + std::to_string(r.pair_id) +
                                           " timestamps decrease at " +
                                           std::to_string(r.timestamp_us));
    }
    s.t.push_back(r.timestamp_us);
    s.amp.push_back(amplitude(r));
  }
  for (std::size_t p = 0; p < kPairs; ++p) {
    if (series[p].t.empty()) throw Error(ErrorCode::MissingPair, "pair " + std::to_string(p) + " has no records");
  }

  const double start = static_cast<double>(std::max(series[0].t.front(), series[1].t.front()));
  const double end = static_cast<double>(std::min(series[0].t.back(), series[1].t.back()));
  if (end < start) throw Error(ErrorCode::MissingPair, "pair time spans do not overlap");

  const double period_us = 1e6 / static_cast<double>(rate_hz);
  const std::size_t grid_points = static_cast<std::size_t>(std::floor((end - start) / period_us)) + 1;
  const std::size_t rows = rate_hz * window_seconds;
  const std::size_t n_windows = grid_points / rows;

  std::vector<RawWindow> windows;
  windows.reserve(n_windows);
  std::array<std::size_t, kPairs> cursor{0, 0};
  for (std::size_t w = 0; w < n_windows; ++w) {
    RawWindow win{Matrix(rows, kColumns), 0};
    win.start_us = static_cast<std::uint64_t>(std::llround(start + static_cast<double>(w * rows) * period_us));
    for (std::size_t r = 0; r < rows; ++r) {
      const double t = start + static_cast<double>(w * rows + r) * period_us;
      for (std::size_t p = 0; p < kPairs; ++p) {
        const auto& s = series[p];
        std::size_t& j = cursor[p];
        while (j + 1 < s.t.size() && static_cast<double>(s.t[j + 1]) <= t) ++j;
        float* dst = &win.data.values[r * kColumns + p * kSubcarriers];
        const double t0 = static_cast<double>(s.t[j]);
        if (t <= t0 || j + 1 == s.t.size()) {
          for (std::size_t c = 0; c < kSubcarriers; ++c) dst[c] = s.amp[j][c];
          continue;
        }
        const double w1 = (t - t0) / (static_cast<double>(s.t[j + 1]) - t0);
        for (std::size_t c = 0; c < kSubcarriers; ++c) {
          const double a = s.amp[j][c];
          const double b = s.amp[j + 1][c];
          dst[c] = static_cast<float>(a + w1 * (b - a));
        }
      }
    }
    windows.push_back(std::move(win));
  }
  return windows;
}

/// Block-mean decimation along rows: out(r, c) = mean of in rows
/// [factor*r, factor*r + factor) at column c. Accumulates in double.
inline Matrix downsample(const Matrix& in, std::size_t factor = kDownsampleFactor) {
  if (factor == 0 || in.rows % factor != 0) {
    throw Error(ErrorCode::BadFactor, std::to_string(in.rows) + " rows not divisible by " + std::to_string(factor));
  }
  Matrix out(in.rows / factor, in.cols);
  std::vector<double> acc(in.cols);
  for (std::size_t r = 0; r < out.rows; ++r) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t k = 0; k < factor; ++k) {
      const float* row = &in.values[(r * factor + k) * in.cols];
      for (std::size_t c = 0; c < in.cols; ++c) acc[c] += row[c];
    }
    for (std::size_t c = 0; c < in.cols; ++c) out(r, c) = static_cast<float>(acc[c] / static_cast<double>(factor));
  }
  return out;
}

inline Matrix downsample(const RawWindow& window, std::size_t factor = kDownsampleFactor) {
  return downsample(window.data, factor);
}

/// Two-dimensional block mean to an exact target shape (both factors must divide).
inline Matrix block_mean(const Matrix& in, std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0 || in.rows % rows != 0 || in.cols % cols != 0) {
    throw Error(ErrorCode::BadFactor, std::to_string(in.rows) + "x" + std::to_string(in.cols) +
                                          " does not tile into " + std::to_string(rows) + "x" +
                                          std::to_string(cols));
  }
  const std::size_t fr = in.rows / rows;
  const std::size_t fc = in.cols / cols;
  Matrix out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (std::size_t i = 0; i < fr; ++i) {
        for (std::size_t j = 0; j < fc; ++j) acc += in(r * fr + i, c * fc + j);
      }
      out(r, c) = static_cast<float>(acc / static_cast<double>(fr * fc));
    }
  }
  return out;
}

/// The canonical pipeline: stream -> windows -> 500x60 samples.
inline std::vector<Sample> records_to_samples(std::span<const CsiRecord> records, std::uint8_t label,
                                              std::uint16_t domain_id) {
  if (label > 1) throw Error(ErrorCode::BadLabel, "label " + std::to_string(label));
  std::vector<Sample> out;
  for (const auto& w : build_windows(records)) out.push_back(Sample{downsample(w), label, domain_id});
  return out;
}

// ---------------------------------------------------------------------------
// CSIW samples

inline void validate_sample(const Sample& s) {
  if (s.data.rows != kSampleRows || s.data.cols != kColumns || s.data.values.size() != kSampleRows * kColumns) {
    throw Error(ErrorCode::ShapeMismatch, "sample must be 500x60, got " + std::to_string(s.data.rows) + "x" +
                                              std::to_string(s.data.cols));
  }
  if (s.label > 1) throw Error(ErrorCode::BadLabel, "label " + std::to_string(s.label));
  for (float v : s.data.values) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFinite, "non-finite sample entry");
  }
}

inline std::vector<std::uint8_t> encode_sample(const Sample& s) {
  validate_sample(s);
  ByteWriter w;
  w.put_bytes("CSIW");
  w.put_u16(kFormatVersion);
  w.put_u8(s.label);
  w.put_u16(s.domain_id);
  w.put_u32(static_cast<std::uint32_t>(s.data.rows));
  w.put_u32(static_cast<std::uint32_t>(s.data.cols));
  for (float v : s.data.values) w.put_f32(v);
  return std::move(w).bytes();
}

inline Sample parse_sample(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  in.expect_magic("CSIW");
  if (const auto version = in.u16(); version != kFormatVersion) {
    throw Error(ErrorCode::BadVersion, "CSIW version " + std::to_string(version));
  }
  Sample s;
  s.label = in.u8();
  s.domain_id = in.u16();
  const std::uint32_t rows = in.u32();
  const std::uint32_t cols = in.u32();
  if (rows != kSampleRows || cols != kColumns) {
    throw Error(ErrorCode::ShapeMismatch, "CSIW shape " + std::to_string(rows) + "x" + std::to_string(cols));
  }
  s.data = Matrix(rows, cols);
  for (auto& v : s.data.values) v = in.f32();
  in.expect_end();
  validate_sample(s);
  return s;
}

inline void write_sample_file(const std::filesystem::path& path, const Sample& s) {
  write_file_bytes(path, encode_sample(s));
}

inline Sample read_sample_file(const std::filesystem::path& path) { return parse_sample(read_file_bytes(path)); }

}  // namespace adafall
