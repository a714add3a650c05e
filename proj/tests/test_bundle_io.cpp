#include <doctest.h>

#include <fstream>

#include <json.hpp>

#include "pnr/bundle_io.hpp"
#include "test_util.hpp"

using namespace pnr;
using test::code_of;

namespace {

LabeledBatch sample_labeled(uint64_t seed) {
  LabeledBatch labeled;
  labeled.batch = test::random_batch(13, 24, seed);
  labeled.labels.assign(13, 0);
  SplitMix64 rng(seed + 1);
  for (auto& v : labeled.labels)
    v = rng.uniform01() < 0.15 ? kUnclassified : static_cast<int32_t>(rng.next_u64() % 9);
  return labeled;
}

}  // namespace

TEST_CASE("bundle round-trip is bit-exact") {
  test::TempDir dir("bundle");
  SplitMix64 seeds(404);
  for (int iter = 0; iter < 1000; ++iter) {
    const LabeledBatch original = sample_labeled(seeds.next_u64());
    const std::string prefix = dir.file("b" + std::to_string(iter % 4));
    save_bundle(original, prefix);
    const LabeledBatch back = load_bundle(prefix);
    REQUIRE(back.batch.n_traces() == original.batch.n_traces());
    CHECK((back.batch.traces - original.batch.traces).cwiseAbs().maxCoeff() == 0.0f);
    CHECK(back.labels == original.labels);
    CHECK(back.has_labels);
    CHECK(back.batch.meta.sample_rate_hz == original.batch.meta.sample_rate_hz);
    CHECK(back.batch.meta.adc_range_v == original.batch.meta.adc_range_v);
  }
}

TEST_CASE("unlabeled bundles skip the label file") {
  test::TempDir dir("bundle-nolabel");
  const TraceBatch batch = test::random_batch(5, 10, 7);
  save_bundle(batch, dir.file("plain"));
  CHECK(!std::filesystem::exists(dir.file("plain.labels.csv")));
  const LabeledBatch back = load_bundle(dir.file("plain"));
  CHECK(!back.has_labels);
  CHECK(back.labels.empty());
  CHECK((back.batch.traces - batch.traces).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("bundle loader rejects corruption") {
  test::TempDir dir("bundle-bad");
  const LabeledBatch original = sample_labeled(11);
  save_bundle(original, dir.file("x"));

  SUBCASE("payload size mismatch") {
    std::ofstream bin(dir.file("x.traces.bin"), std::ios::binary | std::ios::app);
    const float extra = 0.0f;
    bin.write(reinterpret_cast<const char*>(&extra), sizeof(extra));
    bin.close();
    CHECK(code_of([&] { load_bundle(dir.file("x")); }) == ErrorCode::FormatError);
  }
  SUBCASE("unknown version") {
    nlohmann::json meta;
    {
      std::ifstream in(dir.file("x.meta.json"));
      in >> meta;
    }
    meta["version"] = 2;
    std::ofstream out(dir.file("x.meta.json"), std::ios::trunc);
    out << meta.dump();
    out.close();
    CHECK(code_of([&] { load_bundle(dir.file("x")); }) == ErrorCode::FormatError);
  }
  SUBCASE("missing meta is an io error") {
    CHECK(code_of([&] { load_bundle(dir.file("nope")); }) == ErrorCode::IoError);
  }
  SUBCASE("junk in labels") {
    std::ofstream out(dir.file("x.labels.csv"), std::ios::trunc);
    out << "0\n1\n2x\n";
    out.close();
    CHECK(code_of([&] { load_bundle(dir.file("x")); }) == ErrorCode::FormatError);
  }
}

TEST_CASE("labels csv round-trips the sentinel") {
  test::TempDir dir("labels");
  const std::vector<int32_t> labels{0, 5, kUnclassified, 63, 1};
  write_labels_csv(labels, dir.file("l.csv"));
  CHECK(read_labels_csv(dir.file("l.csv")) == labels);
}

TEST_CASE("distribution json round-trips") {
  test::TempDir dir("dist");
  PhotonDistribution dist;
  dist.probs = Eigen::Vector4d(0.1, 0.2, 0.3, 0.4);
  write_distribution_json(dist, dir.file("d.json"));
  const PhotonDistribution back = read_distribution_json(dir.file("d.json"));
  REQUIRE(back.truncation() == 3);
  CHECK((back.probs - dist.probs).cwiseAbs().maxCoeff() == 0.0);

  SUBCASE("truncation field must match the array") {
    nlohmann::json j;
    {
      std::ifstream in(dir.file("d.json"));
      in >> j;
    }
    j["truncation"] = 7;
    std::ofstream out(dir.file("d.json"), std::ios::trunc);
    out << j.dump();
    out.close();
    CHECK(code_of([&] { read_distribution_json(dir.file("d.json")); }) ==
          ErrorCode::FormatError);
  }
}

TEST_CASE("matrix csv keeps full double precision") {
  test::TempDir dir("mat");
  SplitMix64 rng(21);
  Eigen::MatrixXd mat(7, 3);
  for (Eigen::Index i = 0; i < mat.size(); ++i) mat.data()[i] = rng.normal() * 1e-3;
  write_matrix_csv(mat, dir.file("m.csv"));
  const Eigen::MatrixXd back = read_matrix_csv(dir.file("m.csv"));
  REQUIRE(back.rows() == mat.rows());
  REQUIRE(back.cols() == mat.cols());
  CHECK((back - mat).cwiseAbs().maxCoeff() == 0.0);

  SUBCASE("ragged rows rejected") {
    std::ofstream out(dir.file("m.csv"), std::ios::app);
    out << "1.0,2.0\n";
    out.close();
    CHECK(code_of([&] { read_matrix_csv(dir.file("m.csv")); }) == ErrorCode::FormatError);
  }
}
