#include "pnr/types.hpp"

#include <cmath>

namespace pnr {

AcquisitionMeta AcquisitionMeta::derive(double sample_rate_hz, double rep_rate_hz,
                                        double adc_range_v) {
  require(sample_rate_hz > 0.0 && rep_rate_hz > 0.0, ErrorCode::InvalidArgument,
          "sample_rate and rep_rate must be positive");
  AcquisitionMeta meta;
  meta.sample_rate_hz = sample_rate_hz;
  meta.rep_rate_hz = rep_rate_hz;
  meta.samples_per_trace = static_cast<int>(std::floor(sample_rate_hz / rep_rate_hz));
  meta.adc_range_v = adc_range_v;
  meta.validate();
  return meta;
}

void AcquisitionMeta::validate() const {
  require(sample_rate_hz > 0.0 && rep_rate_hz > 0.0, ErrorCode::InvalidArgument,
          "sample_rate and rep_rate must be positive");
  require(samples_per_trace >= 2, ErrorCode::InvalidArgument, "samples_per_trace must be >= 2");
  require(samples_per_trace == static_cast<int>(std::floor(sample_rate_hz / rep_rate_hz)),
          ErrorCode::InvalidArgument, "samples_per_trace != floor(sample_rate / rep_rate)");
}

void TraceBatch::validate() const {
  meta.validate();
  require(traces.rows() >= 1, ErrorCode::InvalidArgument, "batch needs at least one trace");
  require(traces.cols() == meta.samples_per_trace, ErrorCode::LengthMismatch,
          "trace length differs from samples_per_trace");
  require(traces.allFinite(), ErrorCode::InvalidArgument, "non-finite sample");
  const float limit = static_cast<float>(meta.adc_range_v);
  require(traces.cwiseAbs().maxCoeff() <= limit, ErrorCode::InvalidArgument,
          "sample exceeds ADC full scale");
}

void LabeledBatch::validate() const {
  batch.validate();
  require(static_cast<Eigen::Index>(labels.size()) == batch.n_traces(),
          ErrorCode::LengthMismatch, "label count differs from trace count");
  for (int32_t label : labels)
    require(label == kUnclassified || (label >= 0 && label <= kMaxPhotonLabel),
            ErrorCode::InvalidArgument, "label outside [0, 63] and not the sentinel");
}

void PhotonDistribution::validate() const {
  require(probs.size() >= 1, ErrorCode::InvalidArgument, "empty distribution");
  require((probs.array() >= 0.0).all(), ErrorCode::InvalidArgument, "negative probability");
  require(std::abs(probs.sum() - 1.0) <= 1e-9, ErrorCode::InvalidArgument,
          "probabilities do not sum to 1");
}

TraceBatch segment_stream(std::span<const float> samples, const AcquisitionMeta& meta,
                          int64_t trigger_offset) {
  meta.validate();
  require(trigger_offset >= 0, ErrorCode::InvalidArgument, "negative trigger offset");
  const int64_t length = static_cast<int64_t>(samples.size());
  const int64_t window = meta.samples_per_trace;
  const int64_t usable = length - trigger_offset;
  const int64_t n = usable >= window ? usable / window : 0;
  require(n >= 1, ErrorCode::EmptyStream, "fewer than one full trace after the trigger offset");

  TraceBatch batch;
  batch.meta = meta;
  batch.traces.resize(n, window);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t s = 0; s < window; ++s)
      batch.traces(i, s) = samples[trigger_offset + i * window + s];
  return batch;
}

PhotonDistribution distribution_from_labels(std::span<const int32_t> labels, int truncation,
                                            bool drop_unclassified) {
  require(truncation >= 0, ErrorCode::InvalidArgument, "negative truncation");
  require(!labels.empty(), ErrorCode::InvalidArgument, "no labels");

  Eigen::VectorXd counts = Eigen::VectorXd::Zero(truncation + 1);
  int64_t classified = 0;
  for (int32_t label : labels) {
    if (label == kUnclassified) continue;
    require(label <= truncation, ErrorCode::TruncationOverflow,
            "label " + std::to_string(label) + " exceeds truncation " +
                std::to_string(truncation));
    counts[label] += 1.0;
    ++classified;
  }
  if (drop_unclassified) {
    require(classified > 0, ErrorCode::AllUnclassified, "every label is the sentinel");
    counts /= static_cast<double>(classified);
  } else {
    counts /= static_cast<double>(labels.size());
  }
  return PhotonDistribution{std::move(counts)};
}

}  // namespace pnr
