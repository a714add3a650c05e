#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <vector>

#include "hdbscan_reference.hpp"
#include "pnr/hdbscan.hpp"
#include "pnr/rng.hpp"
#include "test_util.hpp"

using namespace pnr;
using test::code_of;

namespace {

Eigen::MatrixXd blob_line(const std::vector<double>& centers, int per_blob, double sigma,
                          uint64_t seed) {
  SplitMix64 rng(seed);
  Eigen::MatrixXd pts(centers.size() * per_blob, 2);
  Eigen::Index row = 0;
  for (double c : centers)
    for (int i = 0; i < per_blob; ++i, ++row) {
      pts(row, 0) = c + sigma * rng.normal();
      pts(row, 1) = sigma * rng.normal();
    }
  return pts;
}

ClusterModel with_centroids(const std::vector<double>& firsts) {
  ClusterModel model;
  model.centroids = Eigen::MatrixXd::Zero(firsts.size(), 2);
  for (size_t i = 0; i < firsts.size(); ++i) model.centroids(i, 0) = firsts[i];
  return model;
}

// Random mixture with the pathologies that stress the tree construction:
// exact duplicates, grid-snapped ties, lone outliers.
Eigen::MatrixXd random_instance(SplitMix64& rng, int n, int dim) {
  const int n_blobs = 1 + static_cast<int>(rng.next_u64() % 4);
  const bool snap = rng.next_u64() % 4 == 0;
  Eigen::MatrixXd centers(n_blobs, dim);
  for (Eigen::Index i = 0; i < centers.size(); ++i)
    centers.data()[i] = 3.0 * (rng.uniform01() - 0.5) * 2.0;
  Eigen::MatrixXd pts(n, dim);
  for (int p = 0; p < n; ++p) {
    const uint64_t roll = rng.next_u64() % 10;
    if (roll == 0) {
      for (int c = 0; c < dim; ++c) pts(p, c) = 8.0 * (rng.uniform01() - 0.5);
    } else if (roll == 1 && p > 0) {
      pts.row(p) = pts.row(static_cast<Eigen::Index>(rng.next_u64() % p));
      continue;
    } else {
      const auto b = static_cast<Eigen::Index>(rng.next_u64() % n_blobs);
      for (int c = 0; c < dim; ++c) pts(p, c) = centers(b, c) + 0.15 * rng.normal();
    }
    if (snap)
      for (int c = 0; c < dim; ++c) pts(p, c) = std::round(pts(p, c) * 2.0) / 2.0;
  }
  return pts;
}

}  // namespace

TEST_CASE("parameter and input guards") {
  Eigen::MatrixXd pts = blob_line({0.0}, 30, 0.05, 1);
  HdbscanParams params{5, 3, 0.0};

  CHECK(code_of([&] { hdbscan_fit(pts, {1, 1, 0.0}); }) == ErrorCode::InvalidArgument);
  CHECK(code_of([&] { hdbscan_fit(pts, {5, 0, 0.0}); }) == ErrorCode::InvalidArgument);
  CHECK(code_of([&] { hdbscan_fit(pts, {5, 6, 0.0}); }) == ErrorCode::InvalidArgument);
  CHECK(code_of([&] { hdbscan_fit(pts, {5, 3, -0.1}); }) == ErrorCode::InvalidArgument);
  CHECK(code_of([&] { hdbscan_fit(pts.topRows(4), params); }) == ErrorCode::TooFewPoints);
  Eigen::MatrixXd bad = pts;
  bad(3, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK(code_of([&] { hdbscan_fit(bad, params); }) == ErrorCode::InvalidArgument);
  CHECK(code_of([&] { core_distances(pts.topRows(1), 3); }) == ErrorCode::TooFewPoints);
}

TEST_CASE("core distances pick the k-th neighbour, self excluded") {
  Eigen::MatrixXd pts(4, 1);
  pts << 0.0, 1.0, 3.0, 7.0;
  const Eigen::VectorXd c1 = core_distances(pts, 1);
  CHECK(c1[0] == 1.0);
  CHECK(c1[1] == 1.0);
  CHECK(c1[2] == 2.0);
  CHECK(c1[3] == 4.0);
  const Eigen::VectorXd c2 = core_distances(pts, 2);
  CHECK(c2[0] == 3.0);
  CHECK(c2[1] == 2.0);
  CHECK(c2[2] == 3.0);
  CHECK(c2[3] == 6.0);
  // min_samples beyond n-1 clamps to the farthest neighbour.
  const Eigen::VectorXd c9 = core_distances(pts, 9);
  CHECK(c9[0] == 7.0);
  CHECK((core_distances(pts, 2) - core_distances_serial(pts, 2)).cwiseAbs().maxCoeff() ==
        0.0);
}

TEST_CASE("three well-separated blobs come out clean") {
  const Eigen::MatrixXd pts = blob_line({0.0, 1.0, 2.0}, 200, 0.05, 7);
  const ClusterModel model = hdbscan_fit(pts, {20, 10, 0.0});

  REQUIRE(model.n_clusters() == 3);
  int noise = 0;
  for (int p = 0; p < 600; ++p) {
    const int32_t truth = p / 200;
    if (model.assignments[p] == kNoise) {
      ++noise;
      continue;
    }
    CHECK(model.assignments[p] == truth);  // compact ids follow point order here
  }
  CHECK(noise == 0);
  for (int c = 0; c < 3; ++c) {
    CHECK(model.centroids(c, 0) == doctest::Approx(static_cast<double>(c)).epsilon(0.02));
    CHECK(model.photon_map.at(c) == c);
  }
}

TEST_CASE("sparse bridge points between blobs are noise") {
  // Integer coordinates make every mutual-reachability weight exact: the two
  // 20-point chains (spacing 1) and the 5-point bridge (spacing 32, exactly
  // the gap to each chain) disconnect simultaneously at weight 32, so the
  // root splits into two clusters plus five stray points in one step.
  Eigen::MatrixXd pts(45, 2);
  pts.setZero();
  for (int i = 0; i < 20; ++i) pts(i, 0) = i;
  for (int i = 0; i < 5; ++i) pts(20 + i, 0) = 51 + 32 * i;
  for (int i = 0; i < 20; ++i) pts(25 + i, 0) = 211 + i;

  const ClusterModel model = hdbscan_fit(pts, {10, 1, 0.0});
  REQUIRE(model.n_clusters() == 2);
  for (int p = 0; p < 20; ++p) CHECK(model.assignments[p] == 0);
  for (int i = 0; i < 5; ++i) CHECK(model.assignments[20 + i] == kNoise);
  for (int p = 25; p < 45; ++p) CHECK(model.assignments[p] == 1);
  CHECK(test::ref_mismatch(model, test::ref_hdbscan(pts, {10, 1, 0.0})).empty());
}

TEST_CASE("cluster structure survives translation") {
  const Eigen::MatrixXd pts = blob_line({0.0, 1.5, 3.0}, 80, 0.06, 11);
  const ClusterModel base = hdbscan_fit(pts, {15, 8, 0.0});
  const ClusterModel moved =
      hdbscan_fit((pts.array() + 512.0).matrix(), {15, 8, 0.0});
  CHECK(base.n_clusters() == moved.n_clusters());
  CHECK(base.assignments == moved.assignments);
}

TEST_CASE("selection epsilon merges close-born clusters") {
  const Eigen::MatrixXd pts = blob_line({0.0, 0.6}, 120, 0.05, 13);
  const ClusterModel split = hdbscan_fit(pts, {25, 10, 0.0});
  CHECK(split.n_clusters() == 2);
  const ClusterModel merged = hdbscan_fit(pts, {25, 10, 1.0});
  CHECK(merged.n_clusters() == 1);
  // The merged cluster holds every point the split clusters held.
  int split_members = 0, merged_members = 0;
  for (int32_t a : split.assignments) split_members += a != kNoise;
  for (int32_t a : merged.assignments) merged_members += a != kNoise;
  CHECK(merged_members == split_members);
}

TEST_CASE("photon map orders by first coordinate and merges tight gaps") {
  SUBCASE("distinct centroids count up") {
    const auto map = map_clusters_to_photon_numbers(with_centroids({-3.0, 0.0, 3.0}), 0.35);
    CHECK(map == std::map<int32_t, int32_t>{{0, 0}, {1, 1}, {2, 2}});
  }
  SUBCASE("cluster ids need not arrive sorted") {
    const auto map = map_clusters_to_photon_numbers(with_centroids({3.0, -3.0, 0.0}), 0.35);
    CHECK(map == std::map<int32_t, int32_t>{{1, 0}, {2, 1}, {0, 2}});
  }
  SUBCASE("a gap below the fraction of the median shares the photon number") {
    const auto map =
        map_clusters_to_photon_numbers(with_centroids({-3.0, -2.9, 0.0, 3.0}), 0.5);
    CHECK(map == std::map<int32_t, int32_t>{{0, 0}, {1, 0}, {2, 1}, {3, 2}});
  }
  SUBCASE("single cluster maps to zero") {
    const auto map = map_clusters_to_photon_numbers(with_centroids({4.2}), 0.35);
    CHECK(map == std::map<int32_t, int32_t>{{0, 0}});
  }
  SUBCASE("manual override is taken verbatim") {
    const std::map<int32_t, int32_t> manual{{0, 5}, {2, 7}};
    CHECK(map_clusters_to_photon_numbers(with_centroids({-3.0, 0.0, 3.0}), 0.35, manual) ==
          manual);
  }
}

TEST_CASE("prediction rules") {
  ClusterModel model;
  model.points.resize(2, 2);
  model.points << 0.0, 0.0, 5.0, 0.0;
  model.assignments = {0, kNoise};
  model.core_distances.resize(2);
  model.core_distances << 1.0, 1.0;
  model.params = {2, 1, 0.0};
  model.photon_map = {{0, 4}};

  Eigen::MatrixXd q(5, 2);
  q << 0.5, 0.0,   // inside the exemplar radius
      1.0, 0.0,    // exactly on the radius, still accepted
      1.5, 0.0,    // beyond it
      5.1, 0.0,    // nearest exemplar is noise
      100.0, 0.0;  // nowhere near anything
  CHECK(hdbscan_predict(model, q) ==
        std::vector<int32_t>{4, 4, kUnclassified, kUnclassified, kUnclassified});
  CHECK(hdbscan_predict_serial(model, q) == hdbscan_predict(model, q));

  SUBCASE("selection epsilon widens the acceptance radius") {
    model.params.selection_epsilon = 2.0;
    CHECK(hdbscan_predict(model, q.row(2)) == std::vector<int32_t>{4});
  }
  SUBCASE("clusters missing from the photon map stay unclassified") {
    model.photon_map.clear();
    CHECK(hdbscan_predict(model, q.row(0)) == std::vector<int32_t>{kUnclassified});
  }
  SUBCASE("query dimension is checked") {
    CHECK(code_of([&] { hdbscan_predict(model, Eigen::MatrixXd::Zero(1, 3)); }) ==
          ErrorCode::LengthMismatch);
  }
}

TEST_CASE("fit on blobs then predict fresh draws from the same blobs") {
  const Eigen::MatrixXd pts = blob_line({0.0, 1.0}, 150, 0.05, 17);
  const ClusterModel model = hdbscan_fit(pts, {25, 10, 0.0});
  REQUIRE(model.n_clusters() == 2);

  const Eigen::MatrixXd fresh = blob_line({0.0, 1.0}, 50, 0.05, 18);
  const auto out = hdbscan_predict(model, fresh);
  int hits = 0;
  for (int p = 0; p < 100; ++p) hits += out[p] == p / 50;
  CHECK(hits >= 95);  // a few tail draws may fall outside every exemplar radius
}

TEST_CASE("matches the brute-force oracle on random instances") {
  SplitMix64 rng(19);
  for (int iter = 0; iter < 12; ++iter) {
    const int n = 20 + static_cast<int>(rng.next_u64() % 41);
    const int dim = 1 + static_cast<int>(rng.next_u64() % 3);
    HdbscanParams params;
    params.min_cluster_size = 2 + static_cast<int>(rng.next_u64() % 9);
    params.min_samples = 1 + static_cast<int>(rng.next_u64() %
                                              static_cast<uint64_t>(params.min_cluster_size));
    const uint64_t eps_roll = rng.next_u64() % 3;
    params.selection_epsilon = eps_roll == 0 ? 0.0 : (eps_roll == 1 ? 0.3 : 1.5);

    const Eigen::MatrixXd pts = random_instance(rng, n, dim);
    const ClusterModel model = hdbscan_fit(pts, params);
    const test::RefResult ref = test::ref_hdbscan(pts, params);
    const std::string mismatch = test::ref_mismatch(model, ref);
    INFO("iter ", iter, " n=", n, " dim=", dim, " mcs=", params.min_cluster_size,
         " ms=", params.min_samples, " eps=", params.selection_epsilon, ": ", mismatch);
    CHECK(mismatch.empty());
  }
}

TEST_CASE("duplicate points keep lambda finite and the fit stable") {
  Eigen::MatrixXd pts(60, 2);
  pts.topRows(40) = blob_line({0.0, 2.0}, 20, 0.05, 23);
  for (int i = 0; i < 20; ++i) pts.row(40 + i) = pts.row(i % 5);  // heavy duplication
  const ClusterModel model = hdbscan_fit(pts, {10, 5, 0.0});
  CHECK(model.n_clusters() >= 1);
  const test::RefResult ref = test::ref_hdbscan(pts, {10, 5, 0.0});
  CHECK(test::ref_mismatch(model, ref).empty());
}

TEST_CASE("model files round-trip") {
  test::TempDir dir("hdb");
  const Eigen::MatrixXd pts = blob_line({0.0, 1.0}, 60, 0.05, 29);
  const ClusterModel model = hdbscan_fit(pts, {15, 6, 0.25});
  save_cluster_model_json(model, dir.file("m.json"));
  const ClusterModel back = load_cluster_model_json(dir.file("m.json"));

  CHECK((back.points - model.points).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.centroids - model.centroids).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.core_distances - model.core_distances).cwiseAbs().maxCoeff() == 0.0);
  CHECK(back.assignments == model.assignments);
  CHECK(back.photon_map == model.photon_map);
  CHECK(back.params.min_cluster_size == 15);
  CHECK(back.params.min_samples == 6);
  CHECK(back.params.selection_epsilon == 0.25);

  // The reloaded model predicts identically.
  const Eigen::MatrixXd fresh = blob_line({0.0, 1.0}, 20, 0.05, 31);
  CHECK(hdbscan_predict(back, fresh) == hdbscan_predict(model, fresh));

  CHECK(code_of([&] { load_cluster_model_json(dir.file("absent.json")); }) ==
        ErrorCode::IoError);
}
