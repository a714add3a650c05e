#ifndef PNR_TEST_UTIL_HPP
#define PNR_TEST_UTIL_HPP

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "pnr/errors.hpp"
#include "pnr/rng.hpp"
#include "pnr/types.hpp"

namespace pnr::test {

/// Error code raised by f, or InvalidArgument's sentinel-free cousin: ConfigError
/// is never expected here, so a non-throwing f is reported as a distinct value.
inline constexpr ErrorCode kNoThrow = static_cast<ErrorCode>(-1);

template <typename F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return kNoThrow;
}

struct TempDir {
  std::filesystem::path path;

  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           (tag + "-" + std::to_string(SplitMix64(std::random_device{}()).next_u64() % 1000000));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

inline TraceBatch random_batch(int64_t n_traces, int samples, uint64_t seed,
                               double scale = 0.5) {
  AcquisitionMeta meta;
  meta.sample_rate_hz = 20e6;
  meta.rep_rate_hz = 20e6 / samples;
  meta.samples_per_trace = samples;
  meta.adc_range_v = 5.0;
  TraceBatch batch;
  batch.meta = meta;
  batch.traces.resize(n_traces, samples);
  SplitMix64 rng(seed);
  for (Eigen::Index i = 0; i < batch.traces.size(); ++i)
    batch.traces.data()[i] = static_cast<float>(scale * rng.normal());
  return batch;
}

inline Eigen::VectorXd random_simplex(int size, SplitMix64& rng) {
  Eigen::VectorXd v(size);
  double total = 0.0;
  for (int i = 0; i < size; ++i) {
    v[i] = -std::log(1.0 - rng.uniform01());
    total += v[i];
  }
  return v / total;
}

}  // namespace pnr::test

#endif
