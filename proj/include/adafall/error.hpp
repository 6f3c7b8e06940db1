#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace adafall {

enum class ErrorCode {
  // csi_ingest
  BadMagic,
  BadVersion,
  Truncated,
  TrailingBytes,
  BadPairId,
  NonFinite,
  EmptyInput,
  MissingPair,
  Unsorted,
  BadFactor,
  // diff_core / models
  ShapeMismatch,
  BadLabel,
  NotScalar,
  // ada_train
  DegenerateData,
  // harness
  UnknownDomain,
  SingleDomain,
  EmptySet,
  EmptyEnsemble,
  // plumbing
  InvalidArgument,
  Config,
  Io,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::BadVersion: return "BadVersion";
    case ErrorCode::Truncated: return "Truncated";
    case ErrorCode::TrailingBytes: return "TrailingBytes";
    case ErrorCode::BadPairId: return "BadPairId";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::MissingPair: return "MissingPair";
    case ErrorCode::Unsorted: return "Unsorted";
    case ErrorCode::BadFactor: return "BadFactor";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::BadLabel: return "BadLabel";
    case ErrorCode::NotScalar: return "NotScalar";
    case ErrorCode::DegenerateData: return "DegenerateData";
    case ErrorCode::UnknownDomain: return "UnknownDomain";
    case ErrorCode::SingleDomain: return "SingleDomain";
    case ErrorCode::EmptySet: return "EmptySet";
    case ErrorCode::EmptyEnsemble: return "EmptyEnsemble";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::Config: return "Config";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

/// Every failure in the library is reported as an Error carrying a code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  [[nodiscard]] ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Process exit code for an error: 2 for IO/config problems, 1 otherwise.
constexpr int exit_code_for(ErrorCode code) {
  return (code == ErrorCode::Io || code == ErrorCode::Config) ? 2 : 1;
}

namespace detail {

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) throw Error(code, what);
}

}  // namespace detail

}  // namespace adafall
