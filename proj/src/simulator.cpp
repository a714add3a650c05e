#include "pnr/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pnr/errors.hpp"
#include "pnr/rng.hpp"

namespace pnr {

void PulseShape::validate() const {
  require(tau_rise > 0.0 && tau_fall > tau_rise, ErrorCode::InvalidArgument,
          "need 0 < tau_rise < tau_fall");
  require(unit_amplitude > 0.0, ErrorCode::InvalidArgument, "unit_amplitude must be positive");
  require(noise_sigma >= 0.0, ErrorCode::InvalidArgument, "noise_sigma must be non-negative");
  require(sat_scale > 0.0, ErrorCode::InvalidArgument, "sat_scale must be positive or inf");
  require(std::isfinite(baseline), ErrorCode::InvalidArgument, "baseline must be finite");
}

PulseShape default_pulse_shape() {
  PulseShape s;
  s.tau_rise = 0.3e-6;
  s.tau_fall = 2.0e-6;
  s.unit_amplitude = 0.12;
  s.sat_scale = 12.0;
  s.noise_sigma = 6e-3;
  s.baseline = 0.0;
  return s;
}

AcquisitionMeta default_acquisition(double rep_rate_hz) {
  return AcquisitionMeta::derive(20e6, rep_rate_hz, 5.0);
}

SampledLabels sample_photon_numbers(const SourceModel& source, int64_t n_pulses, uint64_t seed) {
  require(n_pulses >= 1, ErrorCode::InvalidArgument, "n_pulses must be at least 1");
  SampledLabels out;
  SplitMix64 rng(seed);

  if (const auto* coh = std::get_if<CoherentSource>(&source)) {
    require(coh->mu >= 0.0, ErrorCode::InvalidArgument, "mu must be non-negative");
    out.signal.resize(n_pulses);
    for (int64_t i = 0; i < n_pulses; ++i) {
      out.signal[i] = static_cast<int32_t>(
          std::min<int64_t>(rng.poisson(coh->mu), kMaxPhotonLabel));
    }
    return out;
  }

  const auto& tmsv = std::get<TmsvSource>(source);
  require(std::abs(tmsv.lambda) < 1.0, ErrorCode::InvalidArgument, "|lambda| must be < 1");
  require(tmsv.eta_signal >= 0.0 && tmsv.eta_signal <= 1.0 && tmsv.eta_idler >= 0.0 &&
              tmsv.eta_idler <= 1.0,
          ErrorCode::InvalidArgument, "eta must lie in [0, 1]");
  const double r = tmsv.lambda * tmsv.lambda;
  out.paired = true;
  out.signal.resize(n_pulses);
  out.idler.resize(n_pulses);
  for (int64_t i = 0; i < n_pulses; ++i) {
    const int64_t n = std::min<int64_t>(rng.geometric(r), kMaxPhotonLabel);
    out.signal[i] = static_cast<int32_t>(rng.binomial(n, tmsv.eta_signal));
    out.idler[i] = static_cast<int32_t>(rng.binomial(n, tmsv.eta_idler));
  }
  return out;
}

double pulse_amplitude(int32_t n, const PulseShape& shape) {
  if (n <= 0) return 0.0;
  if (!std::isfinite(shape.sat_scale)) return shape.unit_amplitude * n;
  return shape.unit_amplitude * shape.sat_scale * (1.0 - std::exp(-n / shape.sat_scale));
}

double pulse_peak_time(const PulseShape& shape) {
  return shape.tau_rise * shape.tau_fall / (shape.tau_fall - shape.tau_rise) *
         std::log(shape.tau_fall / shape.tau_rise);
}

namespace {

double peak_norm(const PulseShape& shape) {
  const double t = pulse_peak_time(shape);
  return std::exp(-t / shape.tau_fall) - std::exp(-t / shape.tau_rise);
}

// Shared by the serial and OpenMP drivers so both emit identical bits.
// The window sum factorizes: sum_j A_j * h_1(t + j*T) splits into one
// coefficient per exponential, leaving two FMAs per sample.
void synth_one_trace(std::span<const int32_t> labels, int64_t k, const PulseShape& shape,
                     const Eigen::VectorXd& fall, const Eigen::VectorXd& rise, double rep_period,
                     double kappa, int history_depth, float adc_range, uint64_t seed,
                     float* dst) {
  double coef_fall = 0.0;
  double coef_rise = 0.0;
  for (int j = 0; j <= history_depth && j <= k; ++j) {
    const double amp = pulse_amplitude(labels[k - j], shape) / kappa;
    coef_fall += amp * std::exp(-(j * rep_period) / shape.tau_fall);
    coef_rise += amp * std::exp(-(j * rep_period) / shape.tau_rise);
  }
  SplitMix64 noise(derive_stream(seed, static_cast<uint64_t>(k)));
  for (int64_t s = 0; s < fall.size(); ++s) {
    double v = shape.baseline + coef_fall * fall[s] - coef_rise * rise[s];
    if (shape.noise_sigma > 0.0) v += shape.noise_sigma * noise.normal();
    dst[s] = std::clamp(static_cast<float>(v), -adc_range, adc_range);
  }
}

LabeledBatch synthesize_impl(std::span<const int32_t> labels, const PulseShape& shape,
                             const AcquisitionMeta& meta, int history_depth, uint64_t seed,
                             bool parallel) {
  shape.validate();
  meta.validate();
  require(!labels.empty(), ErrorCode::InvalidArgument, "labels must be non-empty");
  require(history_depth >= 0, ErrorCode::InvalidArgument, "history_depth must be >= 0");
  for (int32_t n : labels)
    require(n >= 0 && n <= kMaxPhotonLabel, ErrorCode::InvalidArgument,
            "photon labels must lie in [0, 63]");

  const int64_t n_traces = static_cast<int64_t>(labels.size());
  const int64_t length = meta.samples_per_trace;
  Eigen::VectorXd fall(length), rise(length);
  for (int64_t s = 0; s < length; ++s) {
    const double t = s * meta.sample_period_s();
    fall[s] = std::exp(-t / shape.tau_fall);
    rise[s] = std::exp(-t / shape.tau_rise);
  }
  const double kappa = peak_norm(shape);
  const double rep_period = meta.rep_period_s();
  const float adc_range = static_cast<float>(meta.adc_range_v);

  LabeledBatch out;
  out.batch.meta = meta;
  out.batch.traces.resize(n_traces, length);
  out.labels.assign(labels.begin(), labels.end());

  if (parallel) {
#pragma omp parallel for schedule(static)
    for (int64_t k = 0; k < n_traces; ++k) {
      synth_one_trace(labels, k, shape, fall, rise, rep_period, kappa, history_depth, adc_range,
                      seed, out.batch.traces.row(k).data());
    }
  } else {
    for (int64_t k = 0; k < n_traces; ++k) {
      synth_one_trace(labels, k, shape, fall, rise, rep_period, kappa, history_depth, adc_range,
                      seed, out.batch.traces.row(k).data());
    }
  }
  return out;
}

}  // namespace

LabeledBatch synthesize_batch(std::span<const int32_t> labels, const PulseShape& shape,
                              const AcquisitionMeta& meta, int history_depth, uint64_t seed) {
  return synthesize_impl(labels, shape, meta, history_depth, seed, true);
}

LabeledBatch synthesize_batch_serial(std::span<const int32_t> labels, const PulseShape& shape,
                                     const AcquisitionMeta& meta, int history_depth,
                                     uint64_t seed) {
  return synthesize_impl(labels, shape, meta, history_depth, seed, false);
}

double pulse_template(double t_seconds, int32_t n, const PulseShape& shape) {
  if (t_seconds < 0.0 || n <= 0) return 0.0;
  const double kappa = peak_norm(shape);
  return pulse_amplitude(n, shape) *
         (std::exp(-t_seconds / shape.tau_fall) - std::exp(-t_seconds / shape.tau_rise)) / kappa;
}

}  // namespace pnr
