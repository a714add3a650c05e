#ifndef PNR_KNN_HPP
#define PNR_KNN_HPP

#include <optional>
#include <string>
#include <vector>

#include "pnr/pca.hpp"
#include "pnr/types.hpp"

namespace pnr {

enum class FeatureMode { kFullTrace, kPcaScores };

struct KnnModel {
  TraceMatrix features;  // n_train x feature_dim, original order
  std::vector<int32_t> labels;
  int k = 5;
  FeatureMode mode = FeatureMode::kFullTrace;
  int n_components = 0;          // used by kPcaScores
  std::optional<PcaModel> pca;   // fitted on the training traces in kPcaScores

  Eigen::Index n_train() const { return features.rows(); }
  Eigen::Index feature_dim() const { return features.cols(); }
};

/// Emulates the target repetition rate from well-separated calibration
/// traces: after a seeded shuffle, emulated trace k is the sum of windows
/// calib[k-j][j*L' .. (j+1)*L') for j = 0..history_depth, keeping calib
/// label k. The first history_depth traces lack a full history and are
/// dropped. Tails come from each trace's own continuation, so calibration
/// traces must hold at least (history_depth+1)*L' samples.
LabeledBatch build_training_set(const LabeledBatch& calib, double target_rep_rate_hz,
                                int history_depth, uint64_t shuffle_seed);

KnnModel fit_knn(const LabeledBatch& training, int k, FeatureMode mode, int n_components = 0);

/// Exact k-nearest-neighbour majority vote by Euclidean distance. Vote ties
/// fall to the smaller summed distance among tied labels, then the smaller
/// label. Distance ties at the k-th place admit the smaller label, which
/// makes predictions independent of training-row order.
std::vector<int32_t> knn_predict(const KnnModel& model, const TraceBatch& batch);
std::vector<int32_t> knn_predict_serial(const KnnModel& model, const TraceBatch& batch);

/// Files: <prefix>.meta.json (k, mode, embedded PCA model when present),
/// <prefix>.features.bin (f32le row-major), <prefix>.labels.csv.
void save_knn_model(const KnnModel& model, const std::string& path_prefix);
KnnModel load_knn_model(const std::string& path_prefix);

}  // namespace pnr

#endif
