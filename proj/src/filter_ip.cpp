#include "pnr/filter_ip.hpp"

#include <algorithm>
#include <cmath>

#include "pnr/errors.hpp"

namespace pnr {

Eigen::VectorXd reference_trace(const TraceBatch& batch) {
  require(batch.n_traces() >= 1, ErrorCode::InvalidArgument, "need at least one trace");
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(batch.trace_length());
  for (Eigen::Index i = 0; i < batch.n_traces(); ++i)
    sum += batch.traces.row(i).cast<double>().transpose();
  return sum / static_cast<double>(batch.n_traces());
}

namespace {

Eigen::VectorXd inner_products_impl(const TraceBatch& batch, const Eigen::VectorXd& ref,
                                    bool parallel) {
  require(ref.size() == batch.trace_length(), ErrorCode::LengthMismatch,
          "reference length differs from trace length");
  Eigen::VectorXd out(batch.n_traces());
  if (parallel) {
#pragma omp parallel for schedule(static)
    for (Eigen::Index i = 0; i < batch.n_traces(); ++i)
      out[i] = batch.traces.row(i).cast<double>() * ref;
  } else {
    for (Eigen::Index i = 0; i < batch.n_traces(); ++i)
      out[i] = batch.traces.row(i).cast<double>() * ref;
  }
  return out;
}

}  // namespace

Eigen::VectorXd inner_products(const TraceBatch& batch, const Eigen::VectorXd& ref) {
  return inner_products_impl(batch, ref, true);
}

Eigen::VectorXd inner_products_serial(const TraceBatch& batch, const Eigen::VectorXd& ref) {
  return inner_products_impl(batch, ref, false);
}

ValleyBinning bin_by_valleys(const std::vector<double>& values,
                             const ValleyBinningParams& params) {
  require(values.size() >= 2, ErrorCode::InvalidArgument, "need at least 2 values to bin");
  require(params.n_bins_hint >= 1 && params.smoothing_window >= 1, ErrorCode::InvalidArgument,
          "bad binning parameters");
  require(params.min_prominence_fraction >= 0.0 && params.min_prominence_fraction <= 1.0,
          ErrorCode::InvalidArgument, "min_prominence_fraction must lie in [0, 1]");

  double lo = values[0], hi = values[0];
  for (double v : values) {
    require(std::isfinite(v), ErrorCode::InvalidArgument, "non-finite value");
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi == lo) {  // degenerate spread; pad so the histogram has width
    lo -= 0.5;
    hi += 0.5;
  }

  ValleyBinning out;
  const int n_bins = params.n_bins_hint;
  const double width = (hi - lo) / n_bins;
  out.raw_counts.assign(n_bins, 0.0);
  out.bin_centers.resize(n_bins);
  for (int b = 0; b < n_bins; ++b) out.bin_centers[b] = lo + (b + 0.5) * width;
  auto bin_of = [&](double v) {
    return std::clamp(static_cast<int>((v - lo) / width), 0, n_bins - 1);
  };
  for (double v : values) out.raw_counts[bin_of(v)] += 1.0;

  out.smoothed_counts.resize(n_bins);
  const int left = (params.smoothing_window - 1) / 2;
  const int right = params.smoothing_window / 2;
  for (int b = 0; b < n_bins; ++b) {
    const int a = std::max(0, b - left);
    const int z = std::min(n_bins - 1, b + right);
    double s = 0.0;
    for (int i = a; i <= z; ++i) s += out.raw_counts[i];
    out.smoothed_counts[b] = s / (z - a + 1);  // window truncated at the edges
  }

  // Local maxima over runs of equal smoothed counts. A run is a peak when
  // every existing differing neighbour is lower; a run with no differing
  // neighbour at all (flat histogram) is not.
  std::vector<int> candidates;
  for (int start = 0; start < n_bins;) {
    int end = start;
    while (end + 1 < n_bins && out.smoothed_counts[end + 1] == out.smoothed_counts[start]) ++end;
    const bool has_left = start > 0;
    const bool has_right = end < n_bins - 1;
    const bool left_lower = !has_left || out.smoothed_counts[start - 1] < out.smoothed_counts[start];
    const bool right_lower = !has_right || out.smoothed_counts[end + 1] < out.smoothed_counts[start];
    if ((has_left || has_right) && left_lower && right_lower)
      candidates.push_back((start + end) / 2);
    start = end + 1;
  }
  require(!candidates.empty(), ErrorCode::NoPeaks, "histogram has no local maxima");

  double tallest = 0.0;
  for (int b : candidates) tallest = std::max(tallest, out.smoothed_counts[b]);
  for (int b : candidates)
    if (out.smoothed_counts[b] >= params.min_prominence_fraction * tallest)
      out.peak_bins.push_back(b);
  require(!out.peak_bins.empty(), ErrorCode::NoPeaks, "no peaks survive the prominence filter");

  for (size_t p = 0; p + 1 < out.peak_bins.size(); ++p) {
    int valley = out.peak_bins[p];
    for (int b = out.peak_bins[p]; b <= out.peak_bins[p + 1]; ++b)
      if (out.smoothed_counts[b] < out.smoothed_counts[valley]) valley = b;
    out.thresholds.push_back(out.bin_centers[valley]);
  }

  out.labels.resize(values.size());
  for (size_t i = 0; i < values.size(); ++i) {
    int32_t label = 0;
    for (double t : out.thresholds)
      if (values[i] >= t) ++label;
    out.labels[i] = label;
  }
  return out;
}

}  // namespace pnr
