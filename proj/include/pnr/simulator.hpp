#ifndef PNR_SIMULATOR_HPP
#define PNR_SIMULATOR_HPP

#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include "pnr/types.hpp"

namespace pnr {

struct PulseShape {
  double tau_rise = 0.0;        // seconds
  double tau_fall = 0.0;        // seconds
  double unit_amplitude = 0.0;  // volts per photon in the low-n limit
  double sat_scale = 0.0;       // photons; +inf disables saturation
  double noise_sigma = 0.0;     // volts, additive white Gaussian per sample
  double baseline = 0.0;        // volts

  void validate() const;
};

/// 0.3/2.0 us rise/fall, 0.12 V per photon, saturation at 12 photons, 6 mV
/// noise. Gives clean bands at 100 kHz and heavy overlap at 800 kHz.
PulseShape default_pulse_shape();

/// 20 MS/s with a +-5 V span, wide enough that stacked saturated pulses
/// never hit the rails.
AcquisitionMeta default_acquisition(double rep_rate_hz);

struct CoherentSource {
  double mu = 0.0;  // mean photons per pulse
};

struct TmsvSource {
  double lambda = 0.0;      // squeezing parameter, |lambda| < 1
  double eta_signal = 1.0;  // transmission of each arm
  double eta_idler = 1.0;
};

using SourceModel = std::variant<CoherentSource, TmsvSource>;

struct SampledLabels {
  std::vector<int32_t> signal;
  std::vector<int32_t> idler;  // empty unless paired
  bool paired = false;
};

/// Coherent draws i.i.d. Poisson(mu). TMSV draws the pair number n with
/// probability (1-|l|^2)|l|^(2n) and thins each arm with Binomial(n, eta).
SampledLabels sample_photon_numbers(const SourceModel& source, int64_t n_pulses, uint64_t seed);

/// A(n) = unit_amplitude * sat_scale * (1 - exp(-n/sat_scale)); linear in n
/// when saturation is disabled.
double pulse_amplitude(int32_t n, const PulseShape& shape);

/// Where the unit template peaks: tau_r*tau_f/(tau_f-tau_r) * ln(tau_f/tau_r).
double pulse_peak_time(const PulseShape& shape);

/// h_n(t) = A(n) * (exp(-t/tau_fall) - exp(-t/tau_rise)) / kappa for t >= 0,
/// zero before; kappa scales the peak to 1.
double pulse_template(double t_seconds, int32_t n, const PulseShape& shape);

/// Trace k covers [0, T) of pulse k and carries the decaying tails of the
/// previous history_depth pulses:
///   baseline + sum_{j=0..H} h_{n_{k-j}}(t + j*T) + noise.
/// Samples are clamped to +-adc_range_v like a real digitizer. Noise for
/// trace k comes from derive_stream(seed, k), so the parallel and serial
/// paths produce bit-identical output.
LabeledBatch synthesize_batch(std::span<const int32_t> labels, const PulseShape& shape,
                              const AcquisitionMeta& meta, int history_depth, uint64_t seed);
LabeledBatch synthesize_batch_serial(std::span<const int32_t> labels, const PulseShape& shape,
                                     const AcquisitionMeta& meta, int history_depth,
                                     uint64_t seed);

}  // namespace pnr

#endif
