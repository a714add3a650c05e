#ifndef PNR_FILTER_IP_HPP
#define PNR_FILTER_IP_HPP

#include <cstdint>
#include <vector>

#include "pnr/types.hpp"

namespace pnr {

/// Element-wise mean over all traces, accumulated in double.
Eigen::VectorXd reference_trace(const TraceBatch& batch);

/// out[i] = <trace_i, ref>.
Eigen::VectorXd inner_products(const TraceBatch& batch, const Eigen::VectorXd& ref);
Eigen::VectorXd inner_products_serial(const TraceBatch& batch, const Eigen::VectorXd& ref);

struct ValleyBinningParams {
  int n_bins_hint = 200;
  int smoothing_window = 5;             // centered moving average, in bins
  double min_prominence_fraction = 0.01;  // relative to the tallest peak
};

struct ValleyBinning {
  std::vector<int32_t> labels;      // k-th ascending interval -> label k
  std::vector<double> thresholds;   // ascending; label(v) = #{t : v >= t}
  std::vector<double> bin_centers;
  std::vector<double> raw_counts;
  std::vector<double> smoothed_counts;
  std::vector<int> peak_bins;       // surviving peaks, ascending
};

/// Histogram the values, smooth, find local maxima (plateaus count once, at
/// their middle bin; a plateau spanning the whole histogram has no peak),
/// drop peaks below min_prominence_fraction of the tallest, and cut at the
/// lowest smoothed bin between surviving neighbours.
ValleyBinning bin_by_valleys(const std::vector<double>& values, const ValleyBinningParams& params);

}  // namespace pnr

#endif
