#ifndef PNR_TYPES_HPP
#define PNR_TYPES_HPP

#include <Eigen/Core>
#include <cstdint>
#include <span>
#include <vector>

#include "pnr/errors.hpp"

namespace pnr {

/// Label given to traces no method could assign; written as -1 in label files.
inline constexpr int32_t kUnclassified = -1;

/// Hard ceiling on photon-number labels; bounds every per-class allocation.
inline constexpr int32_t kMaxPhotonLabel = 63;

struct AcquisitionMeta {
  double sample_rate_hz = 0.0;
  double rep_rate_hz = 0.0;
  int samples_per_trace = 0;
  double adc_range_v = 1.0;  // symmetric full scale, i.e. +-adc_range_v

  /// samples_per_trace is always floor(sample_rate / rep_rate).
  static AcquisitionMeta derive(double sample_rate_hz, double rep_rate_hz,
                                double adc_range_v = 1.0);

  double rep_period_s() const { return 1.0 / rep_rate_hz; }
  double sample_period_s() const { return 1.0 / sample_rate_hz; }
  void validate() const;
};

/// Row-major so a row is a contiguous voltage trace; f32 matches the on-disk
/// encoding (14-bit ADC source data loses nothing).
using TraceMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct TraceBatch {
  TraceMatrix traces;  // n_traces x samples_per_trace
  AcquisitionMeta meta;

  Eigen::Index n_traces() const { return traces.rows(); }
  Eigen::Index trace_length() const { return traces.cols(); }
  void validate() const;
};

struct LabeledBatch {
  TraceBatch batch;
  std::vector<int32_t> labels;  // photon number or kUnclassified
  bool has_labels = true;

  void validate() const;
};

struct PhotonDistribution {
  Eigen::VectorXd probs;  // indexed by photon number 0..truncation

  int truncation() const { return static_cast<int>(probs.size()) - 1; }
  double total() const { return probs.sum(); }

  /// Checks non-negativity and unit mass to 1e-9. Call where a normalized
  /// distribution is required; sub-normalized vectors (missing tail mass or
  /// unclassified mass) are legal as intermediate values.
  void validate() const;
};

// --- core operations -------------------------------------------------------

/// Cuts a raw sample stream into contiguous non-overlapping traces. Leftover
/// tail samples are dropped, never zero-padded.
TraceBatch segment_stream(std::span<const float> samples, const AcquisitionMeta& meta,
                          int64_t trigger_offset);

/// Counts labels into a distribution over 0..truncation. With drop_unclassified
/// the sentinel is excluded from the denominator; otherwise sentinels stay in
/// the denominator, so the returned vector carries the unclassified fraction
/// as missing mass (the "counted as extra class" convention for TVD work).
PhotonDistribution distribution_from_labels(std::span<const int32_t> labels, int truncation,
                                            bool drop_unclassified);

}  // namespace pnr

#endif
