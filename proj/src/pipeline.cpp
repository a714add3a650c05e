#include "pnr/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <vector>

#include "pnr/analysis.hpp"
#include "pnr/bundle_io.hpp"
#include "pnr/errors.hpp"
#include "pnr/filter_ip.hpp"
#include "pnr/hdbscan.hpp"
#include "pnr/knn.hpp"
#include "pnr/pca.hpp"
#include "pnr/rng.hpp"

namespace pnr {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check_keys(const json& obj, const std::set<std::string>& allowed,
                const std::string& where) {
  require(obj.is_object(), ErrorCode::ConfigError, where + " must be a JSON object");
  for (const auto& [key, value] : obj.items())
    require(allowed.count(key) > 0, ErrorCode::ConfigError,
            where + ": unknown key '" + key + "'");
}

template <typename T>
T get_req(const json& j, const std::string& key, const std::string& where) {
  require(j.contains(key), ErrorCode::ConfigError, where + ": missing key '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    fail(ErrorCode::ConfigError, where + ": key '" + key + "' has the wrong type");
  }
}

template <typename T>
T get_or(const json& j, const std::string& key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    fail(ErrorCode::ConfigError, where + ": key '" + key + "' has the wrong type");
  }
}

struct Context {
  std::string out_dir;
  std::map<std::string, LabeledBatch> bundles;
  std::map<std::string, std::vector<int32_t>> labels;
  std::map<std::string, Eigen::MatrixXd> scores;
  std::map<std::string, PhotonDistribution> dists;
  std::map<std::string, KnnModel> knn_models;
  std::map<std::string, ClusterModel> cluster_models;
  std::map<std::string, Eigen::MatrixXd> thetas;
  std::vector<std::string> artifacts;  // paths relative to out_dir

  std::string path(const std::string& rel) {
    artifacts.push_back(rel);
    return (fs::path(out_dir) / rel).string();
  }

  // For path prefixes that expand into several files; register those by hand.
  std::string prefix(const std::string& rel) { return (fs::path(out_dir) / rel).string(); }

  template <typename M>
  const typename M::mapped_type& find(const M& m, const std::string& name,
                                      const std::string& kind) const {
    const auto it = m.find(name);
    require(it != m.end(), ErrorCode::ConfigError, "no " + kind + " named '" + name + "'");
    return it->second;
  }

  template <typename M>
  void put(M& m, const std::string& name, typename M::mapped_type value,
           const std::string& kind) {
    require(m.find(name) == m.end(), ErrorCode::ConfigError,
            "duplicate " + kind + " name '" + name + "'");
    m.emplace(name, std::move(value));
  }
};

double accuracy(const std::vector<int32_t>& predicted, const std::vector<int32_t>& truth) {
  require(predicted.size() == truth.size(), ErrorCode::LengthMismatch,
          "label lists differ in length");
  int64_t hits = 0;
  for (size_t i = 0; i < predicted.size(); ++i)
    if (predicted[i] == truth[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

json matrix_rows(const Eigen::MatrixXd& mat) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < mat.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < mat.cols(); ++c) row.push_back(mat(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

json dist_to_json(const PhotonDistribution& dist) {
  json j;
  j["truncation"] = dist.truncation();
  j["probs"] = std::vector<double>(dist.probs.data(), dist.probs.data() + dist.probs.size());
  return j;
}

// --- reference strings ------------------------------------------------------

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  size_t start = 0;
  for (size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      parts.push_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  return parts;
}

double parse_num(const std::string& s, const std::string& where) {
  try {
    size_t pos = 0;
    const double v = std::stod(s, &pos);
    require(pos == s.size(), ErrorCode::ConfigError, where + ": bad number '" + s + "'");
    return v;
  } catch (const Error&) {
    throw;
  } catch (const std::exception&) {
    fail(ErrorCode::ConfigError, where + ": bad number '" + s + "'");
  }
}

// dist:NAME | poisson:MU:M | labels:NAME:TRUNC[:drop|:keep]
PhotonDistribution resolve_dist_ref(const Context& ctx, const std::string& ref) {
  const auto parts = split(ref, ':');
  const std::string& kind = parts[0];
  if (kind == "dist") {
    require(parts.size() == 2, ErrorCode::ConfigError, "dist ref wants dist:NAME");
    return ctx.find(ctx.dists, parts[1], "distribution");
  }
  if (kind == "poisson") {
    require(parts.size() == 3, ErrorCode::ConfigError, "poisson ref wants poisson:MU:M");
    return poisson_dist(parse_num(parts[1], ref),
                        static_cast<int>(parse_num(parts[2], ref)));
  }
  if (kind == "labels") {
    require(parts.size() == 3 || parts.size() == 4, ErrorCode::ConfigError,
            "labels ref wants labels:NAME:TRUNC[:drop|:keep]");
    bool drop = true;
    if (parts.size() == 4) {
      require(parts[3] == "drop" || parts[3] == "keep", ErrorCode::ConfigError,
              ref + ": last field must be drop or keep");
      drop = parts[3] == "drop";
    }
    const auto& labels = ctx.find(ctx.labels, parts[1], "labels");
    return distribution_from_labels(labels, static_cast<int>(parse_num(parts[2], ref)), drop);
  }
  fail(ErrorCode::ConfigError, "unknown distribution reference '" + ref + "'");
}

// theta:NAME | file:PATH
Eigen::MatrixXd resolve_theta_ref(const Context& ctx, const std::string& ref) {
  const auto parts = split(ref, ':');
  if (parts[0] == "theta") {
    require(parts.size() == 2, ErrorCode::ConfigError, "theta ref wants theta:NAME");
    return ctx.find(ctx.thetas, parts[1], "confusion matrix");
  }
  if (parts[0] == "file") {
    require(parts.size() >= 2, ErrorCode::ConfigError, "theta ref wants file:PATH");
    const std::string path = ref.substr(5);
    std::ifstream in(path);
    require(in.good(), ErrorCode::IoError, "cannot open " + path);
    json j;
    try {
      in >> j;
    } catch (const json::parse_error& e) {
      fail(ErrorCode::FormatError, path + ": " + e.what());
    }
    require(j.contains("theta"), ErrorCode::FormatError, path + ": missing 'theta'");
    const auto rows = j.at("theta");
    require(rows.is_array() && !rows.empty(), ErrorCode::FormatError, path + ": bad theta");
    Eigen::MatrixXd mat(rows.size(), rows.at(0).size());
    for (size_t r = 0; r < rows.size(); ++r) {
      const auto row = rows.at(r).get<std::vector<double>>();
      require(row.size() == static_cast<size_t>(mat.cols()), ErrorCode::FormatError,
              path + ": ragged theta");
      for (size_t c = 0; c < row.size(); ++c) mat(r, c) = row[c];
    }
    return mat;
  }
  fail(ErrorCode::ConfigError, "unknown theta reference '" + ref + "'");
}

}  // namespace

PulseShape pulse_shape_from_json(const json& j) {
  check_keys(j, {"tau_rise", "tau_fall", "unit_amplitude", "sat_scale", "noise_sigma",
                 "baseline"},
             "pulse_shape");
  PulseShape shape = default_pulse_shape();
  shape.tau_rise = get_or(j, "tau_rise", shape.tau_rise, "pulse_shape");
  shape.tau_fall = get_or(j, "tau_fall", shape.tau_fall, "pulse_shape");
  shape.unit_amplitude = get_or(j, "unit_amplitude", shape.unit_amplitude, "pulse_shape");
  shape.noise_sigma = get_or(j, "noise_sigma", shape.noise_sigma, "pulse_shape");
  shape.baseline = get_or(j, "baseline", shape.baseline, "pulse_shape");
  if (j.contains("sat_scale")) {
    const auto& v = j.at("sat_scale");
    if (v.is_null() || (v.is_string() && v.get<std::string>() == "inf")) {
      shape.sat_scale = std::numeric_limits<double>::infinity();
    } else if (v.is_number()) {
      shape.sat_scale = v.get<double>();
    } else {
      fail(ErrorCode::ConfigError, "pulse_shape: sat_scale must be a number, \"inf\" or null");
    }
  }
  shape.validate();
  return shape;
}

SourceModel source_from_json(const json& j) {
  check_keys(j, {"coherent", "tmsv"}, "source");
  require(j.size() == 1, ErrorCode::ConfigError,
          "source wants exactly one of 'coherent' or 'tmsv'");
  if (j.contains("coherent")) {
    const auto& c = j.at("coherent");
    check_keys(c, {"mu"}, "source.coherent");
    CoherentSource src;
    src.mu = get_req<double>(c, "mu", "source.coherent");
    return src;
  }
  const auto& t = j.at("tmsv");
  check_keys(t, {"lambda", "eta_signal", "eta_idler"}, "source.tmsv");
  TmsvSource src;
  src.lambda = get_req<double>(t, "lambda", "source.tmsv");
  src.eta_signal = get_or(t, "eta_signal", 1.0, "source.tmsv");
  src.eta_idler = get_or(t, "eta_idler", 1.0, "source.tmsv");
  return src;
}

std::string hash_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::IoError, "cannot open " + path + " for hashing");
  uint64_t h = 0xcbf29ce484222325ull;
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    const std::streamsize got = in.gcount();
    for (std::streamsize i = 0; i < got; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ull;
    }
    if (got < static_cast<std::streamsize>(sizeof(buf))) break;
  }
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
  return std::string("fnv1a64:") + hex;
}

namespace {

// --- stages -----------------------------------------------------------------

json run_simulate(Context& ctx, const json& cfg, const std::string& name, uint64_t seed) {
  check_keys(cfg, {"stage", "name", "seed", "source", "rep_rate_hz", "n_pulses", "pulse_shape",
                   "history_depth"},
             "simulate");
  require(cfg.contains("source"), ErrorCode::ConfigError, "simulate: missing key 'source'");
  const SourceModel source = source_from_json(cfg.at("source"));
  const double rep_rate = get_req<double>(cfg, "rep_rate_hz", "simulate");
  const int64_t n_pulses = get_req<int64_t>(cfg, "n_pulses", "simulate");
  const int history_depth = get_or(cfg, "history_depth", 4, "simulate");
  const PulseShape shape =
      cfg.contains("pulse_shape") ? pulse_shape_from_json(cfg.at("pulse_shape"))
                                  : default_pulse_shape();
  const AcquisitionMeta meta = default_acquisition(rep_rate);

  const SampledLabels sampled = sample_photon_numbers(source, n_pulses, seed);
  json result;
  result["stage"] = "simulate";
  result["name"] = name;
  const auto register_bundle = [&ctx](const std::string& stem) {
    for (const char* suffix : {".meta.json", ".traces.bin", ".labels.csv"})
      ctx.artifacts.push_back(stem + suffix);
  };
  if (!sampled.paired) {
    LabeledBatch batch =
        synthesize_batch(sampled.signal, shape, meta, history_depth, derive_stream(seed, 100));
    save_bundle(batch, ctx.prefix(name));
    register_bundle(name);
    ctx.put(ctx.labels, name, batch.labels, "labels");
    result["n_traces"] = batch.batch.n_traces();
    result["samples_per_trace"] = batch.batch.trace_length();
    ctx.put(ctx.bundles, name, std::move(batch), "bundle");
  } else {
    LabeledBatch signal =
        synthesize_batch(sampled.signal, shape, meta, history_depth, derive_stream(seed, 101));
    LabeledBatch idler =
        synthesize_batch(sampled.idler, shape, meta, history_depth, derive_stream(seed, 102));
    save_bundle(signal, ctx.prefix(name + ".signal"));
    save_bundle(idler, ctx.prefix(name + ".idler"));
    register_bundle(name + ".signal");
    register_bundle(name + ".idler");
    ctx.put(ctx.labels, name + ".signal", signal.labels, "labels");
    ctx.put(ctx.labels, name + ".idler", idler.labels, "labels");
    result["n_traces"] = signal.batch.n_traces();
    result["samples_per_trace"] = signal.batch.trace_length();
    ctx.put(ctx.bundles, name + ".signal", std::move(signal), "bundle");
    ctx.put(ctx.bundles, name + ".idler", std::move(idler), "bundle");
  }
  return result;
}

json run_classify_ip(Context& ctx, const json& cfg, const std::string& name) {
  check_keys(cfg, {"stage", "name", "in", "bins", "smooth", "prominence"}, "classify_ip");
  const auto in = get_req<std::string>(cfg, "in", "classify_ip");
  ValleyBinningParams params;
  params.n_bins_hint = get_or(cfg, "bins", params.n_bins_hint, "classify_ip");
  params.smoothing_window = get_or(cfg, "smooth", params.smoothing_window, "classify_ip");
  params.min_prominence_fraction =
      get_or(cfg, "prominence", params.min_prominence_fraction, "classify_ip");

  const LabeledBatch& bundle = ctx.find(ctx.bundles, in, "bundle");
  const Eigen::VectorXd ref = reference_trace(bundle.batch);
  const Eigen::VectorXd ips = inner_products(bundle.batch, ref);
  const std::vector<double> values(ips.data(), ips.data() + ips.size());
  const ValleyBinning binning = bin_by_valleys(values, params);

  write_labels_csv(binning.labels, ctx.path(name + ".labels.csv"));
  {
    Eigen::MatrixXd hist(binning.bin_centers.size(), 3);
    for (size_t b = 0; b < binning.bin_centers.size(); ++b) {
      hist(b, 0) = binning.bin_centers[b];
      hist(b, 1) = binning.raw_counts[b];
      hist(b, 2) = binning.smoothed_counts[b];
    }
    write_matrix_csv(hist, ctx.path(name + ".histogram.csv"));
  }
  {
    json t;
    t["thresholds"] = binning.thresholds;
    t["peak_bins"] = binning.peak_bins;
    std::ofstream out(ctx.path(name + ".thresholds.json"), std::ios::trunc);
    require(out.good(), ErrorCode::IoError, "cannot write thresholds");
    out << t.dump(2) << "\n";
  }

  json result;
  result["stage"] = "classify_ip";
  result["name"] = name;
  result["n_peaks"] = binning.peak_bins.size();
  result["thresholds"] = binning.thresholds;
  if (bundle.has_labels) result["accuracy_vs_truth"] = accuracy(binning.labels, bundle.labels);
  ctx.put(ctx.labels, name, binning.labels, "labels");
  return result;
}

json run_pca(Context& ctx, const json& cfg, const std::string& name) {
  check_keys(cfg, {"stage", "name", "in", "components"}, "pca");
  const auto in = get_req<std::string>(cfg, "in", "pca");
  const int components = get_or(cfg, "components", 2, "pca");
  const LabeledBatch& bundle = ctx.find(ctx.bundles, in, "bundle");

  const PcaModel model = fit_pca(bundle.batch);
  const Eigen::MatrixXd scores = pca_transform(bundle.batch, model, components);
  save_pca_json(model, ctx.path(name + ".pca.json"));
  write_matrix_csv(scores, ctx.path(name + ".scores.csv"));

  json result;
  result["stage"] = "pca";
  result["name"] = name;
  result["components"] = components;
  const int top = static_cast<int>(std::min<Eigen::Index>(4, model.singular_values.size()));
  result["leading_singular_values"] =
      std::vector<double>(model.singular_values.data(), model.singular_values.data() + top);
  ctx.put(ctx.scores, name, scores, "scores");
  return result;
}

FeatureMode parse_features(const std::string& text, int* n_components,
                           const std::string& where) {
  if (text == "full") {
    *n_components = 0;
    return FeatureMode::kFullTrace;
  }
  if (text.rfind("pca:", 0) == 0) {
    *n_components = static_cast<int>(parse_num(text.substr(4), where));
    require(*n_components >= 1, ErrorCode::ConfigError, where + ": pca:N wants N >= 1");
    return FeatureMode::kPcaScores;
  }
  fail(ErrorCode::ConfigError, where + ": features must be 'full' or 'pca:N'");
}

json run_knn_train(Context& ctx, const json& cfg, const std::string& name, uint64_t seed) {
  check_keys(cfg, {"stage", "name", "seed", "calib", "labels", "target_rate_hz", "k",
                   "features", "history_depth"},
             "knn_train");
  const auto calib_name = get_req<std::string>(cfg, "calib", "knn_train");
  const double target_rate = get_req<double>(cfg, "target_rate_hz", "knn_train");
  const int k = get_or(cfg, "k", 5, "knn_train");
  const int history_depth = get_or(cfg, "history_depth", 4, "knn_train");
  int n_components = 0;
  const FeatureMode mode = parse_features(get_or<std::string>(cfg, "features", "full", "knn_train"),
                                          &n_components, "knn_train");

  LabeledBatch calib = ctx.find(ctx.bundles, calib_name, "bundle");
  if (cfg.contains("labels")) {
    calib.labels = ctx.find(ctx.labels, cfg.at("labels").get<std::string>(), "labels");
    calib.has_labels = true;
  }
  const LabeledBatch training = build_training_set(calib, target_rate, history_depth, seed);
  KnnModel model = fit_knn(training, k, mode, n_components);
  save_knn_model(model, ctx.prefix(name + ".knn"));
  for (const char* suffix : {".knn.meta.json", ".knn.features.bin", ".knn.labels.csv"})
    ctx.artifacts.push_back(name + suffix);
  if (model.pca.has_value()) ctx.artifacts.push_back(name + ".knn.pca.json");

  json result;
  result["stage"] = "knn_train";
  result["name"] = name;
  result["n_train"] = model.n_train();
  result["feature_dim"] = model.feature_dim();
  ctx.put(ctx.knn_models, name, std::move(model), "knn model");
  return result;
}

json run_knn_predict(Context& ctx, const json& cfg, const std::string& name,
                     double* per_trace_us) {
  check_keys(cfg, {"stage", "name", "model", "in"}, "knn_predict");
  const auto& model =
      ctx.find(ctx.knn_models, get_req<std::string>(cfg, "model", "knn_predict"), "knn model");
  const auto in = get_req<std::string>(cfg, "in", "knn_predict");
  const LabeledBatch& bundle = ctx.find(ctx.bundles, in, "bundle");

  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<int32_t> predicted = knn_predict(model, bundle.batch);
  const auto t1 = std::chrono::steady_clock::now();
  *per_trace_us = std::chrono::duration<double, std::micro>(t1 - t0).count() /
                  static_cast<double>(bundle.batch.n_traces());

  write_labels_csv(predicted, ctx.path(name + ".labels.csv"));
  json result;
  result["stage"] = "knn_predict";
  result["name"] = name;
  result["n_predicted"] = predicted.size();
  if (bundle.has_labels) result["accuracy_vs_truth"] = accuracy(predicted, bundle.labels);
  ctx.put(ctx.labels, name, predicted, "labels");
  return result;
}

json run_cluster(Context& ctx, const json& cfg, const std::string& name,
                 double* per_trace_us) {
  check_keys(cfg, {"stage", "name", "in", "min_cluster_size", "min_samples", "epsilon",
                   "merge_gap_fraction", "photon_map", "predict"},
             "cluster");
  const auto in = get_req<std::string>(cfg, "in", "cluster");
  HdbscanParams params;
  params.min_cluster_size = get_or(cfg, "min_cluster_size", params.min_cluster_size, "cluster");
  params.min_samples = get_or(cfg, "min_samples", params.min_samples, "cluster");
  params.selection_epsilon = get_or(cfg, "epsilon", params.selection_epsilon, "cluster");
  const double merge_gap = get_or(cfg, "merge_gap_fraction", 0.35, "cluster");

  const Eigen::MatrixXd& points = ctx.find(ctx.scores, in, "scores");
  ClusterModel model = hdbscan_fit(points, params);
  if (model.n_clusters() > 0) {
    std::optional<std::map<int32_t, int32_t>> override;
    if (cfg.contains("photon_map")) {
      const auto& pm = cfg.at("photon_map");
      require(pm.is_object(), ErrorCode::ConfigError,
              "cluster: photon_map must map cluster ids to photon numbers");
      std::map<int32_t, int32_t> table;
      for (const auto& [key, value] : pm.items()) {
        require(value.is_number_integer(), ErrorCode::ConfigError,
                "cluster: photon_map values must be integers");
        table[static_cast<int32_t>(parse_num(key, "cluster.photon_map"))] = value.get<int32_t>();
      }
      override = std::move(table);
    }
    model.photon_map = map_clusters_to_photon_numbers(model, merge_gap, override);
  }

  json result;
  result["stage"] = "cluster";
  result["name"] = name;
  result["n_clusters"] = model.n_clusters();
  int64_t noise = 0;
  std::vector<int32_t> fitted_photons(model.assignments.size(), kUnclassified);
  for (size_t i = 0; i < model.assignments.size(); ++i) {
    if (model.assignments[i] == kNoise) {
      ++noise;
    } else if (const auto it = model.photon_map.find(model.assignments[i]);
               it != model.photon_map.end()) {
      fitted_photons[i] = it->second;
    }
  }
  result["noise_fraction"] =
      static_cast<double>(noise) / static_cast<double>(model.assignments.size());
  json pm = json::array();
  for (const auto& [cluster, photon] : model.photon_map)
    pm.push_back(json::array({cluster, photon}));
  result["photon_map"] = std::move(pm);

  // The known failure signature: one blob where the score histogram still
  // shows structure.
  if (model.n_clusters() < 2 && points.rows() >= 2) {
    const std::vector<double> first(points.col(0).data(),
                                    points.col(0).data() + points.rows());
    try {
      const ValleyBinning binning = bin_by_valleys(first, ValleyBinningParams{});
      if (binning.peak_bins.size() >= 2) {
        const std::string warning =
            "fewer than 2 clusters found although the first-score histogram shows " +
            std::to_string(binning.peak_bins.size()) + " peaks; inspect parameters";
        result["warning"] = warning;
        std::cerr << "[cluster] " << warning << "\n";
      }
    } catch (const Error&) {
      // histogram itself degenerate: nothing to warn about
    }
  }

  save_cluster_model_json(model, ctx.path(name + ".hdb.json"));
  write_labels_csv(fitted_photons, ctx.path(name + ".labels.csv"));
  ctx.put(ctx.labels, name, fitted_photons, "labels");

  if (cfg.contains("predict")) {
    const auto query_name = cfg.at("predict").get<std::string>();
    const Eigen::MatrixXd& queries = ctx.find(ctx.scores, query_name, "scores");
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<int32_t> predicted = hdbscan_predict(model, queries);
    const auto t1 = std::chrono::steady_clock::now();
    *per_trace_us = std::chrono::duration<double, std::micro>(t1 - t0).count() /
                    static_cast<double>(queries.rows());
    write_labels_csv(predicted, ctx.path(name + ".pred.labels.csv"));
    int64_t unclassified = 0;
    for (int32_t v : predicted)
      if (v == kUnclassified) ++unclassified;
    result["predicted_unclassified_fraction"] =
        static_cast<double>(unclassified) / static_cast<double>(predicted.size());
    ctx.put(ctx.labels, name + ".pred", predicted, "labels");
  }

  ctx.put(ctx.cluster_models, name, std::move(model), "cluster model");
  return result;
}

json run_distribution(Context& ctx, const json& cfg, const std::string& name) {
  check_keys(cfg, {"stage", "name", "labels", "truncation", "drop_unclassified"},
             "distribution");
  const auto& labels =
      ctx.find(ctx.labels, get_req<std::string>(cfg, "labels", "distribution"), "labels");
  const int truncation = get_req<int>(cfg, "truncation", "distribution");
  const bool drop = get_or(cfg, "drop_unclassified", true, "distribution");

  const PhotonDistribution dist = distribution_from_labels(labels, truncation, drop);
  write_distribution_json(dist, ctx.path(name + ".dist.json"));

  json result;
  result["stage"] = "distribution";
  result["name"] = name;
  result["distribution"] = dist_to_json(dist);
  ctx.put(ctx.dists, name, dist, "distribution");
  return result;
}

json run_herald(Context& ctx, const json& cfg, const std::string& name) {
  check_keys(cfg, {"stage", "name", "signal", "idler", "n"}, "herald");
  const auto& signal =
      ctx.find(ctx.labels, get_req<std::string>(cfg, "signal", "herald"), "labels");
  const auto& idler =
      ctx.find(ctx.labels, get_req<std::string>(cfg, "idler", "herald"), "labels");
  const int n = get_req<int>(cfg, "n", "herald");

  const PhotonDistribution dist = herald(signal, idler, n);
  write_distribution_json(dist, ctx.path(name + ".dist.json"));

  json result;
  result["stage"] = "herald";
  result["name"] = name;
  result["n_idler"] = n;
  result["distribution"] = dist_to_json(dist);
  ctx.put(ctx.dists, name, dist, "distribution");
  return result;
}

json run_tomography(Context& ctx, const json& cfg, const std::string& name, uint64_t seed) {
  check_keys(cfg, {"stage", "name", "seed", "probes", "N", "M", "bootstrap"}, "tomography");
  const int n_trunc = get_or(cfg, "N", 16, "tomography");
  const int m_trunc = get_or(cfg, "M", 16, "tomography");
  PovmOptions options;
  options.bootstrap = get_or(cfg, "bootstrap", 100, "tomography");
  options.seed = seed;

  require(cfg.contains("probes") && cfg.at("probes").is_array(), ErrorCode::ConfigError,
          "tomography: 'probes' must be an array");
  std::vector<ProbeRecord> probes;
  for (const auto& p : cfg.at("probes")) {
    check_keys(p, {"mu", "mu_sigma", "n_pulses", "labels", "labels_csv"}, "tomography.probe");
    ProbeRecord record;
    record.mu = get_req<double>(p, "mu", "tomography.probe");
    record.mu_sigma = get_or(p, "mu_sigma", 0.0, "tomography.probe");
    record.n_pulses = get_req<int64_t>(p, "n_pulses", "tomography.probe");
    std::vector<int32_t> labels;
    if (p.contains("labels")) {
      labels = ctx.find(ctx.labels, p.at("labels").get<std::string>(), "labels");
    } else if (p.contains("labels_csv")) {
      labels = read_labels_csv(p.at("labels_csv").get<std::string>());
    } else {
      fail(ErrorCode::ConfigError, "tomography.probe: wants 'labels' or 'labels_csv'");
    }
    record.measured = distribution_from_labels(labels, n_trunc, true);
    probes.push_back(std::move(record));
  }

  const PovmResult povm = reconstruct_povm(probes, n_trunc, m_trunc, options);
  {
    json t;
    t["theta"] = matrix_rows(povm.theta.theta);
    t["converged"] = povm.converged;
    t["iterations"] = povm.iterations;
    t["objective"] = povm.objective;
    t["warnings"] = povm.warnings;
    if (povm.bootstrap_sigma.size() > 0)
      t["bootstrap_sigma"] = matrix_rows(povm.bootstrap_sigma);
    std::ofstream out(ctx.path(name + ".theta.json"), std::ios::trunc);
    require(out.good(), ErrorCode::IoError, "cannot write theta");
    out << t.dump(2) << "\n";
  }

  json result;
  result["stage"] = "tomography";
  result["name"] = name;
  result["converged"] = povm.converged;
  result["iterations"] = povm.iterations;
  result["objective"] = povm.objective;
  result["warnings"] = povm.warnings;
  ctx.put(ctx.thetas, name, povm.theta.theta, "confusion matrix");
  return result;
}

json run_metric(Context& ctx, const json& cfg, const std::string& name) {
  check_keys(cfg, {"stage", "name", "metric", "a", "b", "N", "M"}, "metric");
  const auto metric = get_req<std::string>(cfg, "metric", "metric");
  const auto a = get_req<std::string>(cfg, "a", "metric");
  const auto b = get_req<std::string>(cfg, "b", "metric");

  double value = 0.0;
  if (metric == "tvd") {
    value = tvd(resolve_dist_ref(ctx, a), resolve_dist_ref(ctx, b));
  } else if (metric == "dist_fidelity") {
    value = distribution_fidelity(resolve_dist_ref(ctx, a), resolve_dist_ref(ctx, b));
  } else if (metric == "fidelity") {
    const int n_rows = get_or(cfg, "N", 16, "metric");
    const int n_cols = get_or(cfg, "M", 16, "metric");
    value = povm_fidelity(resolve_theta_ref(ctx, a), resolve_theta_ref(ctx, b), n_rows, n_cols);
  } else {
    fail(ErrorCode::ConfigError, "metric: unknown metric '" + metric + "'");
  }

  json result;
  result["stage"] = "metric";
  result["name"] = name;
  result["metric"] = metric;
  result["value"] = value;
  result["details"] = {{"a", a}, {"b", b}};
  return result;
}

std::string utc_now() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

PipelineRun run_pipeline(const json& config, const std::string& out_dir,
                         std::optional<uint64_t> seed_override) {
  PipelineRun run;
  Context ctx;
  json resolved = json::object();
  json report;
  report["stages"] = json::array();
  json timing = json::object();

  try {
    check_keys(config, {"seed", "out_dir", "stages"}, "config");
    ctx.out_dir = out_dir.empty() ? get_or<std::string>(config, "out_dir", ".", "config")
                                  : out_dir;
    fs::create_directories(ctx.out_dir);
    const uint64_t global_seed =
        seed_override.value_or(get_or<uint64_t>(config, "seed", 0, "config"));
    resolved["seed"] = global_seed;
    resolved["out_dir"] = ctx.out_dir;
    resolved["stages"] = json::array();

    require(config.contains("stages") && config.at("stages").is_array(),
            ErrorCode::ConfigError, "config: 'stages' must be an array");
    const auto& stages = config.at("stages");
    for (size_t index = 0; index < stages.size(); ++index) {
      const json& cfg = stages.at(index);
      require(cfg.is_object(), ErrorCode::ConfigError, "stage entries must be objects");
      const auto stage = get_req<std::string>(cfg, "stage", "stage " + std::to_string(index));
      const std::string name =
          get_or<std::string>(cfg, "name", "s" + std::to_string(index) + "_" + stage, stage);
      require(!name.empty() && name.find('/') == std::string::npos, ErrorCode::ConfigError,
              stage + ": bad stage name '" + name + "'");
      const uint64_t stage_seed =
          get_or<uint64_t>(cfg, "seed", derive_stream(global_seed, index), stage);

      json echo = cfg;
      echo["name"] = name;
      if (stage == "simulate" || stage == "knn_train" || stage == "tomography")
        echo["seed"] = stage_seed;
      resolved["stages"].push_back(echo);

      const auto t0 = std::chrono::steady_clock::now();
      double per_trace_us = -1.0;
      json result;
      if (stage == "simulate") {
        result = run_simulate(ctx, cfg, name, stage_seed);
      } else if (stage == "classify_ip") {
        result = run_classify_ip(ctx, cfg, name);
      } else if (stage == "pca") {
        result = run_pca(ctx, cfg, name);
      } else if (stage == "knn_train") {
        result = run_knn_train(ctx, cfg, name, stage_seed);
      } else if (stage == "knn_predict") {
        result = run_knn_predict(ctx, cfg, name, &per_trace_us);
      } else if (stage == "cluster") {
        result = run_cluster(ctx, cfg, name, &per_trace_us);
      } else if (stage == "distribution") {
        result = run_distribution(ctx, cfg, name);
      } else if (stage == "herald") {
        result = run_herald(ctx, cfg, name);
      } else if (stage == "tomography") {
        result = run_tomography(ctx, cfg, name, stage_seed);
      } else if (stage == "metric") {
        result = run_metric(ctx, cfg, name);
      } else {
        fail(ErrorCode::ConfigError, "unknown stage '" + stage + "'");
      }
      const auto t1 = std::chrono::steady_clock::now();
      json t;
      t["seconds"] = std::chrono::duration<double>(t1 - t0).count();
      if (per_trace_us >= 0.0) t["per_trace_us"] = per_trace_us;
      timing[name] = std::move(t);
      report["stages"].push_back(std::move(result));
    }

    report["timing"] = std::move(timing);
    report["created_utc"] = utc_now();

    json manifest;
    manifest["config"] = resolved;
    json hashes = json::object();
    for (const auto& rel : ctx.artifacts)
      hashes[rel] = hash_file((fs::path(ctx.out_dir) / rel).string());
    manifest["artifacts"] = std::move(hashes);
    {
      std::ofstream out(fs::path(ctx.out_dir) / "run.json", std::ios::trunc);
      require(out.good(), ErrorCode::IoError, "cannot write run.json");
      out << manifest.dump(2) << "\n";
    }
    {
      std::ofstream out(fs::path(ctx.out_dir) / "report.json", std::ios::trunc);
      require(out.good(), ErrorCode::IoError, "cannot write report.json");
      out << report.dump(2) << "\n";
    }
    run.report = std::move(report);
    run.exit_code = 0;
  } catch (const Error& e) {
    run.exit_code = e.code() == ErrorCode::ConfigError ? 2 : 1;
    run.error = {{"error", {{"code", to_string(e.code())}, {"message", e.what()}}}};
  } catch (const std::exception& e) {
    run.exit_code = 1;
    run.error = {{"error", {{"code", "INTERNAL"}, {"message", e.what()}}}};
  }
  return run;
}

}  // namespace pnr
