#include "pnr/knn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "pnr/bundle_io.hpp"
#include "pnr/errors.hpp"
#include "pnr/rng.hpp"

namespace pnr {

using nlohmann::json;

LabeledBatch build_training_set(const LabeledBatch& calib, double target_rep_rate_hz,
                                int history_depth, uint64_t shuffle_seed) {
  calib.validate();
  for (int32_t label : calib.labels)
    require(label != kUnclassified, ErrorCode::UnclassifiedPresent,
            "calibration labels contain the unclassified sentinel");
  require(target_rep_rate_hz > calib.batch.meta.rep_rate_hz, ErrorCode::RateNotHigher,
          "target repetition rate must exceed the calibration rate");
  require(history_depth >= 0, ErrorCode::InvalidArgument, "history_depth must be >= 0");

  const int64_t n = calib.batch.n_traces();
  require(n > history_depth, ErrorCode::InsufficientTraces,
          "need more calibration traces than history_depth");
  const auto lp =
      static_cast<int64_t>(calib.batch.meta.sample_rate_hz / target_rep_rate_hz);
  require(lp >= 2, ErrorCode::InvalidArgument, "target rate leaves fewer than 2 samples");
  require(calib.batch.trace_length() >= (history_depth + 1) * lp, ErrorCode::LengthMismatch,
          "calibration traces too short to supply " + std::to_string(history_depth) +
              " overlap tails");

  std::vector<int64_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  SplitMix64 rng(shuffle_seed);
  for (int64_t i = n - 1; i >= 1; --i)
    std::swap(order[i], order[rng.next_u64() % static_cast<uint64_t>(i + 1)]);

  LabeledBatch out;
  out.batch.meta = calib.batch.meta;
  out.batch.meta.rep_rate_hz = target_rep_rate_hz;
  out.batch.meta.samples_per_trace = static_cast<int>(lp);
  out.batch.traces.setZero(n - history_depth, lp);
  out.labels.resize(n - history_depth);
  for (int64_t k = history_depth; k < n; ++k) {
    auto row = out.batch.traces.row(k - history_depth);
    for (int j = 0; j <= history_depth; ++j)
      row += calib.batch.traces.row(order[k - j]).segment(j * lp, lp);
    out.labels[k - history_depth] = calib.labels[order[k]];
  }
  return out;
}

KnnModel fit_knn(const LabeledBatch& training, int k, FeatureMode mode, int n_components) {
  training.validate();
  for (int32_t label : training.labels)
    require(label != kUnclassified, ErrorCode::UnclassifiedPresent,
            "training labels contain the unclassified sentinel");
  require(k >= 1, ErrorCode::InvalidArgument, "k must be >= 1");
  require(k <= training.batch.n_traces(), ErrorCode::KTooLarge,
          "k exceeds the number of training traces");

  KnnModel model;
  model.k = k;
  model.mode = mode;
  model.labels = training.labels;
  if (mode == FeatureMode::kFullTrace) {
    model.features = training.batch.traces;
  } else {
    require(n_components >= 1, ErrorCode::InvalidArgument, "n_components must be >= 1");
    model.n_components = n_components;
    model.pca = fit_pca(training.batch);
    model.features = pca_transform(training.batch, *model.pca, n_components).cast<float>();
  }
  return model;
}

namespace {

// Training rows sorted by norm. d(q,t) >= |  ||q|| - ||t||  |, so a query
// only has to scan outward from its own norm until the gap alone beats the
// current k-th best distance.
struct NormIndex {
  TraceMatrix feats;
  std::vector<int32_t> labels;
  std::vector<float> norms;
};

NormIndex build_index(const KnnModel& model) {
  const int64_t n = model.n_train();
  std::vector<int64_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<float> norms(n);
  for (int64_t i = 0; i < n; ++i) norms[i] = model.features.row(i).norm();
  std::sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
    return norms[a] != norms[b] ? norms[a] < norms[b] : a < b;
  });

  NormIndex idx;
  idx.feats.resize(n, model.feature_dim());
  idx.labels.resize(n);
  idx.norms.resize(n);
  for (int64_t i = 0; i < n; ++i) {
    idx.feats.row(i) = model.features.row(order[i]);
    idx.labels[i] = model.labels[order[i]];
    idx.norms[i] = norms[order[i]];
  }
  return idx;
}

using Neighbour = std::pair<float, int32_t>;  // (squared distance, label)

int32_t vote(std::vector<Neighbour>& heap) {
  int32_t counts[kMaxPhotonLabel + 1] = {};
  double dist_sum[kMaxPhotonLabel + 1] = {};
  for (const auto& [d2, label] : heap) {
    ++counts[label];
    dist_sum[label] += std::sqrt(static_cast<double>(d2));
  }
  int32_t best = -1;
  for (int32_t l = 0; l <= kMaxPhotonLabel; ++l) {
    if (counts[l] == 0) continue;
    if (best < 0 || counts[l] > counts[best] ||
        (counts[l] == counts[best] && dist_sum[l] < dist_sum[best]))
      best = l;
  }
  return best;
}

int32_t classify_one(const NormIndex& idx, const Eigen::RowVectorXf& q, int k,
                     std::vector<Neighbour>& heap) {
  const int64_t n = idx.norms.size();
  const float qn = q.norm();
  int64_t ri = std::lower_bound(idx.norms.begin(), idx.norms.end(), qn) - idx.norms.begin();
  int64_t li = ri - 1;

  heap.clear();
  // Slack absorbs the float rounding between the norm-gap bound and the
  // directly computed squared distance; it only ever widens the scan.
  constexpr float kSlack = 1.0f + 1e-4f;
  auto worst = [&]() { return heap.front().first * kSlack + 1e-12f; };
  auto visit = [&](int64_t t) {
    const float d2 = (idx.feats.row(t) - q).squaredNorm();
    const Neighbour cand{d2, idx.labels[t]};
    if (static_cast<int>(heap.size()) < k) {
      heap.push_back(cand);
      std::push_heap(heap.begin(), heap.end());
    } else if (cand < heap.front()) {
      std::pop_heap(heap.begin(), heap.end());
      heap.back() = cand;
      std::push_heap(heap.begin(), heap.end());
    }
  };

  while (li >= 0 || ri < n) {
    const float gap_l = li >= 0 ? qn - idx.norms[li] : std::numeric_limits<float>::infinity();
    const float gap_r = ri < n ? idx.norms[ri] - qn : std::numeric_limits<float>::infinity();
    const float gap = std::min(gap_l, gap_r);
    if (static_cast<int>(heap.size()) == k && gap * gap > worst()) break;
    if (gap_l <= gap_r) {
      visit(li--);
    } else {
      visit(ri++);
    }
  }
  return vote(heap);
}

std::vector<int32_t> predict_impl(const KnnModel& model, const TraceBatch& batch, bool parallel) {
  require(model.n_train() >= model.k && model.k >= 1, ErrorCode::InvalidArgument,
          "model has fewer training rows than k");
  TraceMatrix queries;
  if (model.mode == FeatureMode::kFullTrace) {
    require(batch.trace_length() == model.feature_dim(), ErrorCode::LengthMismatch,
            "trace length differs from the model's feature dimension");
    queries = batch.traces;
  } else {
    require(model.pca.has_value(), ErrorCode::InvalidArgument, "model lacks its PCA stage");
    queries = pca_transform(batch, *model.pca, model.n_components).cast<float>();
  }

  const NormIndex idx = build_index(model);
  const int64_t n_q = queries.rows();

  // Neighbour windows of norm-adjacent queries overlap heavily; walking the
  // queries in norm order keeps the window hot in cache.
  std::vector<int64_t> qorder(n_q);
  std::iota(qorder.begin(), qorder.end(), 0);
  std::vector<float> qnorms(n_q);
  for (int64_t i = 0; i < n_q; ++i) qnorms[i] = queries.row(i).norm();
  std::sort(qorder.begin(), qorder.end(), [&](int64_t a, int64_t b) {
    return qnorms[a] != qnorms[b] ? qnorms[a] < qnorms[b] : a < b;
  });

  std::vector<int32_t> out(n_q);
  if (parallel) {
#pragma omp parallel
    {
      std::vector<Neighbour> heap;
      heap.reserve(model.k);
#pragma omp for schedule(static)
      for (int64_t i = 0; i < n_q; ++i)
        out[qorder[i]] = classify_one(idx, queries.row(qorder[i]), model.k, heap);
    }
  } else {
    std::vector<Neighbour> heap;
    heap.reserve(model.k);
    for (int64_t i = 0; i < n_q; ++i)
      out[qorder[i]] = classify_one(idx, queries.row(qorder[i]), model.k, heap);
  }
  return out;
}

}  // namespace

std::vector<int32_t> knn_predict(const KnnModel& model, const TraceBatch& batch) {
  return predict_impl(model, batch, true);
}

std::vector<int32_t> knn_predict_serial(const KnnModel& model, const TraceBatch& batch) {
  return predict_impl(model, batch, false);
}

void save_knn_model(const KnnModel& model, const std::string& path_prefix) {
  json meta;
  meta["version"] = 1;
  meta["k"] = model.k;
  meta["feature_mode"] = model.mode == FeatureMode::kFullTrace ? "full" : "pca";
  meta["n_components"] = model.n_components;
  meta["n_train"] = model.n_train();
  meta["feature_dim"] = model.feature_dim();
  meta["has_pca"] = model.pca.has_value();
  {
    std::ofstream out(path_prefix + ".meta.json", std::ios::trunc);
    require(out.good(), ErrorCode::IoError, "cannot open " + path_prefix + ".meta.json");
    out << meta.dump(2) << "\n";
    out.flush();
    require(out.good(), ErrorCode::IoError, "short write to " + path_prefix + ".meta.json");
  }
  {
    std::ofstream out(path_prefix + ".features.bin", std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorCode::IoError, "cannot open " + path_prefix + ".features.bin");
    out.write(reinterpret_cast<const char*>(model.features.data()),
              static_cast<std::streamsize>(sizeof(float)) * model.features.size());
    out.flush();
    require(out.good(), ErrorCode::IoError, "short write to " + path_prefix + ".features.bin");
  }
  write_labels_csv(model.labels, path_prefix + ".labels.csv");
  if (model.pca.has_value()) {
    save_pca_json(*model.pca, path_prefix + ".pca.json");
  } else {
    std::remove((path_prefix + ".pca.json").c_str());
  }
}

KnnModel load_knn_model(const std::string& path_prefix) {
  const std::string meta_path = path_prefix + ".meta.json";
  std::ifstream in(meta_path);
  require(in.good(), ErrorCode::IoError, "cannot open " + meta_path);
  json meta;
  try {
    in >> meta;
  } catch (const json::parse_error& e) {
    fail(ErrorCode::FormatError, meta_path + ": " + e.what());
  }

  KnnModel model;
  int64_t n_train = 0, feature_dim = 0;
  bool has_pca = false;
  try {
    require(meta.at("version").get<int>() == 1, ErrorCode::FormatError,
            meta_path + ": unsupported version");
    model.k = meta.at("k").get<int>();
    const auto mode = meta.at("feature_mode").get<std::string>();
    require(mode == "full" || mode == "pca", ErrorCode::FormatError,
            meta_path + ": unknown feature_mode " + mode);
    model.mode = mode == "full" ? FeatureMode::kFullTrace : FeatureMode::kPcaScores;
    model.n_components = meta.at("n_components").get<int>();
    n_train = meta.at("n_train").get<int64_t>();
    feature_dim = meta.at("feature_dim").get<int64_t>();
    has_pca = meta.at("has_pca").get<bool>();
  } catch (const json::exception& e) {
    fail(ErrorCode::FormatError, meta_path + ": " + e.what());
  }
  require(n_train >= 1 && feature_dim >= 1, ErrorCode::FormatError,
          meta_path + ": bad model shape");
  require(model.k >= 1 && model.k <= n_train, ErrorCode::FormatError,
          meta_path + ": k out of range");

  const std::string bin_path = path_prefix + ".features.bin";
  std::ifstream bin(bin_path, std::ios::binary | std::ios::ate);
  require(bin.good(), ErrorCode::IoError, "cannot open " + bin_path);
  const int64_t want = n_train * feature_dim * static_cast<int64_t>(sizeof(float));
  require(static_cast<int64_t>(bin.tellg()) == want, ErrorCode::FormatError,
          bin_path + ": payload size mismatch");
  bin.seekg(0);
  model.features.resize(n_train, feature_dim);
  bin.read(reinterpret_cast<char*>(model.features.data()), want);
  require(bin.good(), ErrorCode::IoError, "short read from " + bin_path);

  model.labels = read_labels_csv(path_prefix + ".labels.csv");
  require(static_cast<int64_t>(model.labels.size()) == n_train, ErrorCode::FormatError,
          path_prefix + ".labels.csv: row count differs from n_train");
  if (has_pca) model.pca = load_pca_json(path_prefix + ".pca.json");
  if (model.mode == FeatureMode::kPcaScores)
    require(model.pca.has_value(), ErrorCode::FormatError,
            meta_path + ": pca feature mode without a stored PCA model");
  return model;
}

}  // namespace pnr
