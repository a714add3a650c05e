#ifndef PNR_ERRORS_HPP
#define PNR_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace pnr {

enum class ErrorCode {
  EmptyStream,
  FormatError,
  IoError,
  TruncationOverflow,
  AllUnclassified,
  UnclassifiedPresent,
  LengthMismatch,
  NoPeaks,
  RateNotHigher,
  InsufficientTraces,
  KTooLarge,
  TooFewPoints,
  TooFewProbes,
  Degenerate,
  EmptyHerald,
  ConfigError,
  InvalidArgument,
};

inline const char* to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::EmptyStream: return "EMPTY_STREAM";
    case ErrorCode::FormatError: return "FORMAT_ERROR";
    case ErrorCode::IoError: return "IO_ERROR";
    case ErrorCode::TruncationOverflow: return "TRUNCATION_OVERFLOW";
    case ErrorCode::AllUnclassified: return "ALL_UNCLASSIFIED";
    case ErrorCode::UnclassifiedPresent: return "UNCLASSIFIED_PRESENT";
    case ErrorCode::LengthMismatch: return "LENGTH_MISMATCH";
    case ErrorCode::NoPeaks: return "NO_PEAKS";
    case ErrorCode::RateNotHigher: return "RATE_NOT_HIGHER";
    case ErrorCode::InsufficientTraces: return "INSUFFICIENT_TRACES";
    case ErrorCode::KTooLarge: return "K_TOO_LARGE";
    case ErrorCode::TooFewPoints: return "TOO_FEW_POINTS";
    case ErrorCode::TooFewProbes: return "TOO_FEW_PROBES";
    case ErrorCode::Degenerate: return "DEGENERATE";
    case ErrorCode::EmptyHerald: return "EMPTY_HERALD";
    case ErrorCode::ConfigError: return "CONFIG_ERROR";
    case ErrorCode::InvalidArgument: return "INVALID_ARGUMENT";
  }
  return "UNKNOWN";
}

/// Domain exception carrying a machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace pnr

#endif
