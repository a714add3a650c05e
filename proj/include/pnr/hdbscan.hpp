#ifndef PNR_HDBSCAN_HPP
#define PNR_HDBSCAN_HPP

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "pnr/types.hpp"

namespace pnr {

inline constexpr int32_t kNoise = -1;

struct HdbscanParams {
  int min_cluster_size = 50;
  int min_samples = 10;
  double selection_epsilon = 0.0;

  void validate() const;
};

/// 1/d with a cap so duplicate points (d ~ 0) stay finite.
inline double lambda_of(double d) { return d > 1e-12 ? 1.0 / d : 1e12; }

/// One cluster of the condensed hierarchy. Node 0 is the root (all points,
/// lambda_birth 0); ids follow a preorder walk with children ordered by their
/// smallest member point index, so two correct implementations produce
/// identical node numbering.
struct CondensedNode {
  int parent = -1;
  double lambda_birth = 0.0;
  int size_at_birth = 0;
  std::vector<std::pair<int, double>> fall_outs;  // (point, lambda), sorted by point
  std::vector<int> children;                      // preorder ids
  double stability = 0.0;
};

struct CondensedTree {
  std::vector<CondensedNode> nodes;
};

struct ClusterModel {
  Eigen::MatrixXd points;            // fitted factor scores, n x dim
  std::vector<int32_t> assignments;  // compact cluster id or kNoise
  Eigen::MatrixXd centroids;         // n_clusters x dim
  std::map<int32_t, int32_t> photon_map;
  Eigen::VectorXd core_distances;
  HdbscanParams params;

  // Diagnostics; not persisted.
  CondensedTree condensed;
  std::vector<int> selected_nodes;  // condensed ids, ascending

  int32_t n_clusters() const { return static_cast<int32_t>(centroids.rows()); }
};

double pair_distance(const Eigen::MatrixXd& points, Eigen::Index a, Eigen::Index b);

/// Distance to the k-th nearest neighbour of each point, self excluded;
/// k is clamped to n-1.
Eigen::VectorXd core_distances(const Eigen::MatrixXd& points, int min_samples);
Eigen::VectorXd core_distances_serial(const Eigen::MatrixXd& points, int min_samples);

/// Core distance -> mutual reachability -> MST -> single linkage (equal
///-weight merges collapse into one multiway split, so the result does not
/// depend on which of several equally good MSTs was found) -> condensed tree
/// -> excess-of-mass selection (strict >; the root is never selected) ->
/// epsilon merging of clusters born closer than selection_epsilon. Cluster
/// ids are compacted in order of each cluster's smallest point index. The
/// photon map is filled with the default merge_gap_fraction; call
/// map_clusters_to_photon_numbers to redo it.
ClusterModel hdbscan_fit(const Eigen::MatrixXd& points, const HdbscanParams& params);

/// Nearest fitted point decides: noise exemplar or distance beyond
/// max(core_distance, selection_epsilon) -> kUnclassified, otherwise the
/// exemplar cluster's photon number.
std::vector<int32_t> hdbscan_predict(const ClusterModel& model, const Eigen::MatrixXd& queries);
std::vector<int32_t> hdbscan_predict_serial(const ClusterModel& model,
                                            const Eigen::MatrixXd& queries);

/// Order clusters by first-coordinate centroid; adjacent clusters closer
/// than merge_gap_fraction * median adjacent gap share a photon number;
/// survivors count 0,1,2,... A manual override table replaces the automatic
/// map verbatim.
std::map<int32_t, int32_t> map_clusters_to_photon_numbers(
    const ClusterModel& model, double merge_gap_fraction,
    const std::optional<std::map<int32_t, int32_t>>& manual_override = std::nullopt);

void save_cluster_model_json(const ClusterModel& model, const std::string& path);
ClusterModel load_cluster_model_json(const std::string& path);

}  // namespace pnr

#endif
