#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#ifdef _OPENMP
#include <omp.h>
#endif

#include "pnr/analysis.hpp"
#include "pnr/bundle_io.hpp"
#include "pnr/errors.hpp"
#include "pnr/filter_ip.hpp"
#include "pnr/hdbscan.hpp"
#include "pnr/knn.hpp"
#include "pnr/pca.hpp"
#include "pnr/pipeline.hpp"
#include "pnr/types.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int g_log_level = 1;  // 0 debug, 1 info, 2 warn, 3 error

void log_at(int level, const std::string& msg) {
  static const char* names[] = {"debug", "info", "warn", "error"};
  if (level >= g_log_level) std::cerr << "[" << names[level] << "] " << msg << "\n";
}

void emit(const json& j) { std::cout << j.dump(2) << "\n"; }

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  pnr::require(in.good(), pnr::ErrorCode::IoError, "cannot open " + path);
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::parse_error& e) {
    pnr::fail(pnr::ErrorCode::FormatError, path + ": " + e.what());
  }
}

double label_accuracy(const std::vector<int32_t>& predicted,
                      const std::vector<int32_t>& truth) {
  pnr::require(predicted.size() == truth.size(), pnr::ErrorCode::LengthMismatch,
               "label lists differ in length");
  int64_t hits = 0;
  for (size_t i = 0; i < predicted.size(); ++i)
    if (predicted[i] == truth[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

// "poisson:MU:M" or a distribution JSON file.
pnr::PhotonDistribution dist_from_arg(const std::string& arg) {
  if (arg.rfind("poisson:", 0) == 0) {
    const std::string rest = arg.substr(8);
    const size_t colon = rest.find(':');
    pnr::require(colon != std::string::npos, pnr::ErrorCode::ConfigError,
                 "analytic reference wants poisson:MU:M");
    try {
      return pnr::poisson_dist(std::stod(rest.substr(0, colon)),
                               std::stoi(rest.substr(colon + 1)));
    } catch (const std::exception&) {
      pnr::fail(pnr::ErrorCode::ConfigError, "bad analytic reference '" + arg + "'");
    }
  }
  return pnr::read_distribution_json(arg);
}

Eigen::MatrixXd theta_from_file(const std::string& path) {
  const json j = load_json_file(path);
  pnr::require(j.contains("theta") && j.at("theta").is_array() && !j.at("theta").empty(),
               pnr::ErrorCode::FormatError, path + ": missing 'theta' matrix");
  const auto& rows = j.at("theta");
  Eigen::MatrixXd mat(rows.size(), rows.at(0).size());
  for (size_t r = 0; r < rows.size(); ++r) {
    std::vector<double> row;
    try {
      row = rows.at(r).get<std::vector<double>>();
    } catch (const json::exception&) {
      pnr::fail(pnr::ErrorCode::FormatError, path + ": non-numeric theta row");
    }
    pnr::require(row.size() == static_cast<size_t>(mat.cols()), pnr::ErrorCode::FormatError,
                 path + ": ragged theta");
    for (size_t c = 0; c < row.size(); ++c) mat(r, c) = row[c];
  }
  return mat;
}

json dist_to_json(const pnr::PhotonDistribution& dist) {
  json j;
  j["truncation"] = dist.truncation();
  j["probs"] = std::vector<double>(dist.probs.data(), dist.probs.data() + dist.probs.size());
  return j;
}

// --- subcommand handlers (return exit code) ---------------------------------

int cmd_simulate(const std::string& config_path, bool seed_given, uint64_t seed,
                 const std::string& out_prefix) {
  pnr::require(!config_path.empty(), pnr::ErrorCode::ConfigError,
               "simulate wants --config with the simulate block");
  json stage = load_json_file(config_path);
  pnr::require(stage.is_object(), pnr::ErrorCode::ConfigError,
               config_path + ": simulate config must be a JSON object");
  stage["stage"] = "simulate";
  const fs::path prefix(out_prefix);
  const std::string name = prefix.filename().string();
  pnr::require(!name.empty(), pnr::ErrorCode::ConfigError,
               "--out must end in a bundle name, not a directory");
  stage["name"] = name;
  if (seed_given) stage["seed"] = seed;

  json config;
  config["stages"] = json::array({stage});
  const std::string out_dir =
      prefix.has_parent_path() ? prefix.parent_path().string() : std::string(".");
  const pnr::PipelineRun run = pnr::run_pipeline(
      config, out_dir, seed_given ? std::optional<uint64_t>(seed) : std::nullopt);
  emit(run.exit_code == 0 ? run.report : run.error);
  return run.exit_code;
}

int cmd_classify_ip(const std::string& in, const std::string& out,
                    const pnr::ValleyBinningParams& params) {
  const pnr::LabeledBatch bundle = pnr::load_bundle(in);
  const Eigen::VectorXd ref = pnr::reference_trace(bundle.batch);
  const Eigen::VectorXd ips = pnr::inner_products(bundle.batch, ref);
  const std::vector<double> values(ips.data(), ips.data() + ips.size());
  const pnr::ValleyBinning binning = pnr::bin_by_valleys(values, params);

  pnr::write_labels_csv(binning.labels, out);
  const fs::path dir = fs::path(out).parent_path();
  {
    Eigen::MatrixXd hist(binning.bin_centers.size(), 3);
    for (size_t b = 0; b < binning.bin_centers.size(); ++b) {
      hist(b, 0) = binning.bin_centers[b];
      hist(b, 1) = binning.raw_counts[b];
      hist(b, 2) = binning.smoothed_counts[b];
    }
    pnr::write_matrix_csv(hist, (dir / "histogram.csv").string());
  }
  {
    json t;
    t["thresholds"] = binning.thresholds;
    t["peak_bins"] = binning.peak_bins;
    std::ofstream f(dir / "thresholds.json", std::ios::trunc);
    pnr::require(f.good(), pnr::ErrorCode::IoError, "cannot write thresholds.json");
    f << t.dump(2) << "\n";
  }

  json result;
  result["command"] = "classify-ip";
  result["n_traces"] = binning.labels.size();
  result["n_peaks"] = binning.peak_bins.size();
  result["thresholds"] = binning.thresholds;
  if (bundle.has_labels)
    result["accuracy_vs_truth"] = label_accuracy(binning.labels, bundle.labels);
  emit(result);
  return 0;
}

int cmd_pca(const std::string& in, int components, const std::string& scores_out,
            std::string model_out) {
  const pnr::LabeledBatch bundle = pnr::load_bundle(in);
  const pnr::PcaModel model = pnr::fit_pca(bundle.batch);
  const Eigen::MatrixXd scores = pnr::pca_transform(bundle.batch, model, components);
  pnr::write_matrix_csv(scores, scores_out);
  if (model_out.empty())
    model_out = fs::path(scores_out).replace_extension().string() + ".pca.json";
  pnr::save_pca_json(model, model_out);

  json result;
  result["command"] = "pca";
  result["components"] = components;
  result["model"] = model_out;
  const int top = static_cast<int>(std::min<Eigen::Index>(4, model.singular_values.size()));
  result["leading_singular_values"] =
      std::vector<double>(model.singular_values.data(), model.singular_values.data() + top);
  emit(result);
  return 0;
}

int cmd_knn_train(const std::string& calib_prefix, const std::string& labels_path,
                  double target_rate, int k, const std::string& features, int history_depth,
                  uint64_t seed, const std::string& model_out) {
  pnr::LabeledBatch calib = pnr::load_bundle(calib_prefix);
  if (!labels_path.empty()) {
    calib.labels = pnr::read_labels_csv(labels_path);
    calib.has_labels = true;
  }
  pnr::FeatureMode mode = pnr::FeatureMode::kFullTrace;
  int n_components = 0;
  if (features == "full") {
    mode = pnr::FeatureMode::kFullTrace;
  } else if (features.rfind("pca:", 0) == 0) {
    mode = pnr::FeatureMode::kPcaScores;
    try {
      n_components = std::stoi(features.substr(4));
    } catch (const std::exception&) {
      n_components = 0;
    }
    pnr::require(n_components >= 1, pnr::ErrorCode::ConfigError,
                 "--features pca:N wants N >= 1");
  } else {
    pnr::fail(pnr::ErrorCode::ConfigError, "--features must be 'full' or 'pca:N'");
  }

  log_at(1, "building overlap training set at " + std::to_string(target_rate) + " Hz");
  const pnr::LabeledBatch training =
      pnr::build_training_set(calib, target_rate, history_depth, seed);
  const pnr::KnnModel model = pnr::fit_knn(training, k, mode, n_components);
  pnr::save_knn_model(model, model_out);

  json result;
  result["command"] = "knn-train";
  result["n_train"] = model.n_train();
  result["feature_dim"] = model.feature_dim();
  result["model"] = model_out;
  emit(result);
  return 0;
}

int cmd_knn_predict(const std::string& model_prefix, const std::string& in,
                    const std::string& out) {
  const pnr::KnnModel model = pnr::load_knn_model(model_prefix);
  const pnr::LabeledBatch bundle = pnr::load_bundle(in);
  log_at(1, "predicting " + std::to_string(bundle.batch.n_traces()) + " traces");
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<int32_t> predicted = pnr::knn_predict(model, bundle.batch);
  const auto t1 = std::chrono::steady_clock::now();
  pnr::write_labels_csv(predicted, out);

  json result;
  result["command"] = "knn-predict";
  result["n_predicted"] = predicted.size();
  result["per_trace_us"] = std::chrono::duration<double, std::micro>(t1 - t0).count() /
                           static_cast<double>(bundle.batch.n_traces());
  if (bundle.has_labels)
    result["accuracy_vs_truth"] = label_accuracy(predicted, bundle.labels);
  emit(result);
  return 0;
}

int cmd_cluster(const std::string& scores_path, const pnr::HdbscanParams& params,
                double merge_gap, const std::string& photon_map_path,
                const std::string& model_out, const std::string& labels_out) {
  const Eigen::MatrixXd points = pnr::read_matrix_csv(scores_path);
  log_at(1, "clustering " + std::to_string(points.rows()) + " points");
  pnr::ClusterModel model = pnr::hdbscan_fit(points, params);
  if (model.n_clusters() > 0) {
    std::optional<std::map<int32_t, int32_t>> manual;
    if (!photon_map_path.empty()) {
      const json pm = load_json_file(photon_map_path);
      pnr::require(pm.is_object(), pnr::ErrorCode::ConfigError,
                   photon_map_path + ": photon map must be an object");
      std::map<int32_t, int32_t> table;
      for (const auto& [key, value] : pm.items()) {
        pnr::require(value.is_number_integer(), pnr::ErrorCode::ConfigError,
                     photon_map_path + ": photon numbers must be integers");
        table[std::stoi(key)] = value.get<int32_t>();
      }
      manual = std::move(table);
    }
    model.photon_map = pnr::map_clusters_to_photon_numbers(model, merge_gap, manual);
  }
  pnr::save_cluster_model_json(model, model_out);

  std::vector<int32_t> photons(model.assignments.size(), pnr::kUnclassified);
  int64_t noise = 0;
  for (size_t i = 0; i < model.assignments.size(); ++i) {
    if (model.assignments[i] == pnr::kNoise) {
      ++noise;
    } else if (const auto it = model.photon_map.find(model.assignments[i]);
               it != model.photon_map.end()) {
      photons[i] = it->second;
    }
  }
  pnr::write_labels_csv(photons, labels_out);

  json result;
  result["command"] = "cluster";
  result["n_clusters"] = model.n_clusters();
  result["noise_fraction"] =
      static_cast<double>(noise) / static_cast<double>(model.assignments.size());
  json pm = json::array();
  for (const auto& [cluster, photon] : model.photon_map)
    pm.push_back(json::array({cluster, photon}));
  result["photon_map"] = std::move(pm);

  if (model.n_clusters() < 2 && points.rows() >= 2) {
    const std::vector<double> first(points.col(0).data(),
                                    points.col(0).data() + points.rows());
    try {
      const pnr::ValleyBinning check = pnr::bin_by_valleys(first, pnr::ValleyBinningParams{});
      if (check.peak_bins.size() >= 2) {
        const std::string warning =
            "fewer than 2 clusters found although the first-score histogram shows " +
            std::to_string(check.peak_bins.size()) +
            " peaks; lower --min-cluster-size or --epsilon";
        result["warning"] = warning;
        log_at(2, warning);
      }
    } catch (const pnr::Error&) {
      // degenerate histogram: nothing more to diagnose
    }
  }
  emit(result);
  return 0;
}

int cmd_herald(const std::string& signal_path, const std::string& idler_path, int n,
               const std::string& out) {
  const std::vector<int32_t> signal = pnr::read_labels_csv(signal_path);
  const std::vector<int32_t> idler = pnr::read_labels_csv(idler_path);
  const pnr::PhotonDistribution dist = pnr::herald(signal, idler, n);
  pnr::write_distribution_json(dist, out);

  json result;
  result["command"] = "herald";
  result["n_idler"] = n;
  result["distribution"] = dist_to_json(dist);
  emit(result);
  return 0;
}

int cmd_tomography(const std::string& probes_path, int n_trunc, int m_trunc, int bootstrap,
                   uint64_t seed, const std::string& out) {
  const json spec = load_json_file(probes_path);
  pnr::require(spec.is_array() && !spec.empty(), pnr::ErrorCode::ConfigError,
               probes_path + ": wants a non-empty list of probes");
  const fs::path base = fs::path(probes_path).parent_path();

  std::vector<pnr::ProbeRecord> probes;
  for (const auto& p : spec) {
    pnr::require(p.is_object() && p.contains("mu") && p.contains("n_pulses") &&
                     p.contains("labels_csv"),
                 pnr::ErrorCode::ConfigError,
                 probes_path + ": each probe wants mu, n_pulses, labels_csv");
    pnr::ProbeRecord record;
    record.mu = p.at("mu").get<double>();
    record.mu_sigma = p.value("mu_sigma", 0.0);
    record.n_pulses = p.at("n_pulses").get<int64_t>();
    fs::path labels_path = p.at("labels_csv").get<std::string>();
    if (labels_path.is_relative()) labels_path = base / labels_path;
    const std::vector<int32_t> labels = pnr::read_labels_csv(labels_path.string());
    record.measured = pnr::distribution_from_labels(labels, n_trunc, true);
    probes.push_back(std::move(record));
  }

  pnr::PovmOptions options;
  options.bootstrap = bootstrap;
  options.seed = seed;
  log_at(1, "reconstructing POVM from " + std::to_string(probes.size()) + " probes");
  const pnr::PovmResult povm = pnr::reconstruct_povm(probes, n_trunc, m_trunc, options);

  json t;
  t["theta"] = json::array();
  for (Eigen::Index r = 0; r < povm.theta.theta.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < povm.theta.theta.cols(); ++c)
      row.push_back(povm.theta.theta(r, c));
    t["theta"].push_back(std::move(row));
  }
  t["converged"] = povm.converged;
  t["iterations"] = povm.iterations;
  t["objective"] = povm.objective;
  t["warnings"] = povm.warnings;
  if (povm.bootstrap_sigma.size() > 0) {
    t["bootstrap_sigma"] = json::array();
    for (Eigen::Index r = 0; r < povm.bootstrap_sigma.rows(); ++r) {
      json row = json::array();
      for (Eigen::Index c = 0; c < povm.bootstrap_sigma.cols(); ++c)
        row.push_back(povm.bootstrap_sigma(r, c));
      t["bootstrap_sigma"].push_back(std::move(row));
    }
  }
  {
    std::ofstream f(out, std::ios::trunc);
    pnr::require(f.good(), pnr::ErrorCode::IoError, "cannot write " + out);
    f << t.dump(2) << "\n";
  }

  json result;
  result["command"] = "tomography";
  result["converged"] = povm.converged;
  result["iterations"] = povm.iterations;
  result["objective"] = povm.objective;
  result["warnings"] = povm.warnings;
  result["out"] = out;
  emit(result);
  return 0;
}

int cmd_metric(const std::string& which, const std::string& a, const std::string& b,
               int n_rows, int n_cols) {
  double value = 0.0;
  if (which == "tvd") {
    value = pnr::tvd(dist_from_arg(a), dist_from_arg(b));
  } else if (which == "dist-fidelity") {
    value = pnr::distribution_fidelity(dist_from_arg(a), dist_from_arg(b));
  } else {
    value = pnr::povm_fidelity(theta_from_file(a), theta_from_file(b), n_rows, n_cols);
  }
  json result;
  result["metric"] = which;
  result["value"] = value;
  result["details"] = {{"a", a}, {"b", b}};
  if (which == "fidelity") result["details"].update(json{{"N", n_rows}, {"M", n_cols}});
  emit(result);
  return 0;
}

int cmd_pipeline(const std::string& config_path, const std::string& out_dir, bool seed_given,
                 uint64_t seed) {
  pnr::require(!config_path.empty(), pnr::ErrorCode::ConfigError, "pipeline wants --config");
  const json config = load_json_file(config_path);
  const pnr::PipelineRun run = pnr::run_pipeline(
      config, out_dir, seed_given ? std::optional<uint64_t>(seed) : std::nullopt);
  emit(run.exit_code == 0 ? run.report : run.error);
  return run.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TES photon-number trace toolkit: simulate, filter, cluster, benchmark"};
  app.require_subcommand(1);

  std::string config_path;
  uint64_t seed = 0;
  int threads = 0;
  std::string log_level = "info";
  app.add_option("--config", config_path, "JSON config file (simulate, pipeline)");
  auto* seed_opt = app.add_option("--seed", seed, "seed override for every seeded stage");
  app.add_option("--threads", threads, "worker thread cap (0 = library default)")
      ->envname("PNR_PULSEKIT_THREADS");
  app.add_option("--log-level", log_level, "debug|info|warn|error")
      ->check(CLI::IsMember({"debug", "info", "warn", "error"}));

  auto* sim = app.add_subcommand("simulate", "synthesize a trace bundle from a source config");
  std::string sim_out;
  sim->add_option("--out", sim_out, "output bundle prefix")->required();
  sim->fallthrough();

  auto* cip = app.add_subcommand("classify-ip", "inner-product filter with valley binning");
  std::string cip_in, cip_out;
  pnr::ValleyBinningParams cip_params;
  cip->add_option("--in", cip_in, "input bundle prefix")->required();
  cip->add_option("--out", cip_out, "output labels csv")->required();
  cip->add_option("--bins", cip_params.n_bins_hint, "histogram bin count");
  cip->add_option("--smooth", cip_params.smoothing_window, "moving-average window in bins");
  cip->add_option("--prominence", cip_params.min_prominence_fraction,
                  "peak floor as a fraction of the tallest");
  cip->fallthrough();

  auto* pca = app.add_subcommand("pca", "fit principal components and emit factor scores");
  std::string pca_in, pca_scores, pca_model;
  int pca_components = 2;
  pca->add_option("--in", pca_in, "input bundle prefix")->required();
  pca->add_option("--components", pca_components, "score dimensions to keep");
  pca->add_option("--scores-out", pca_scores, "output scores csv")->required();
  pca->add_option("--model-out", pca_model, "model path (default: <scores-out>.pca.json)");
  pca->fallthrough();

  auto* ktr = app.add_subcommand("knn-train", "build an overlap training set and fit KNN");
  std::string ktr_calib, ktr_labels, ktr_features = "full", ktr_model;
  double ktr_rate = 0.0;
  int ktr_k = 5, ktr_history = 4;
  ktr->add_option("--calib", ktr_calib, "calibration bundle prefix")->required();
  ktr->add_option("--labels", ktr_labels, "labels csv overriding the bundle's own");
  ktr->add_option("--target-rate", ktr_rate, "target repetition rate in Hz")->required();
  ktr->add_option("--k", ktr_k, "neighbour count");
  ktr->add_option("--features", ktr_features, "'full' or 'pca:N'");
  ktr->add_option("--history-depth", ktr_history, "overlapping predecessors per trace");
  ktr->add_option("--model-out", ktr_model, "model path prefix")->required();
  ktr->fallthrough();

  auto* kpr = app.add_subcommand("knn-predict", "label a bundle with a trained KNN model");
  std::string kpr_model, kpr_in, kpr_out;
  kpr->add_option("--model", kpr_model, "model path prefix")->required();
  kpr->add_option("--in", kpr_in, "input bundle prefix")->required();
  kpr->add_option("--out", kpr_out, "output labels csv")->required();
  kpr->fallthrough();

  auto* clu = app.add_subcommand("cluster", "density clustering of factor scores");
  std::string clu_scores, clu_map, clu_model, clu_labels;
  pnr::HdbscanParams clu_params;
  double clu_gap = 0.35;
  clu->add_option("--scores", clu_scores, "input scores csv")->required();
  clu->add_option("--min-cluster-size", clu_params.min_cluster_size, "smallest real cluster");
  clu->add_option("--min-samples", clu_params.min_samples, "core distance neighbour rank");
  clu->add_option("--epsilon", clu_params.selection_epsilon, "merge clusters born closer");
  clu->add_option("--merge-gap-fraction", clu_gap, "photon-map centroid merge threshold");
  clu->add_option("--photon-map", clu_map, "JSON object mapping cluster id to photon number");
  clu->add_option("--model-out", clu_model, "output model json")->required();
  clu->add_option("--labels-out", clu_labels, "output photon labels csv")->required();
  clu->fallthrough();

  auto* her = app.add_subcommand("herald", "conditional signal distribution given idler count");
  std::string her_signal, her_idler, her_out;
  int her_n = 1;
  her->add_option("--signal", her_signal, "signal labels csv")->required();
  her->add_option("--idler", her_idler, "idler labels csv")->required();
  her->add_option("--n", her_n, "idler photon number to herald on")->required();
  her->add_option("--out", her_out, "output distribution json")->required();
  her->fallthrough();

  auto* tom = app.add_subcommand("tomography", "least-squares POVM reconstruction from probes");
  std::string tom_probes, tom_out;
  int tom_n = 16, tom_m = 16, tom_bootstrap = 100;
  tom->add_option("--probes", tom_probes, "probe list json")->required();
  tom->add_option("--N", tom_n, "reported-count truncation");
  tom->add_option("--M", tom_m, "input-count truncation");
  tom->add_option("--bootstrap", tom_bootstrap, "bootstrap replica count");
  tom->add_option("--out", tom_out, "output theta json")->required();
  tom->fallthrough();

  auto* met = app.add_subcommand("metric", "distribution / POVM comparison metrics");
  std::string met_which, met_a, met_b;
  int met_n = 16, met_m = 16;
  met->add_option("which", met_which, "tvd | fidelity | dist-fidelity")
      ->required()
      ->check(CLI::IsMember({"tvd", "fidelity", "dist-fidelity"}));
  met->add_option("--a", met_a, "first input (dist json, theta json, or poisson:MU:M)")
      ->required();
  met->add_option("--b", met_b, "second input")->required();
  met->add_option("--N", met_n, "fidelity row count");
  met->add_option("--M", met_m, "fidelity column count");
  met->fallthrough();

  auto* pip = app.add_subcommand("pipeline", "run a staged config end to end");
  std::string pip_out;
  pip->add_option("--out", pip_out, "run directory (default: config out_dir)");
  pip->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (log_level == "debug") g_log_level = 0;
  else if (log_level == "info") g_log_level = 1;
  else if (log_level == "warn") g_log_level = 2;
  else g_log_level = 3;
#ifdef _OPENMP
  if (threads > 0) omp_set_num_threads(threads);
#else
  (void)threads;
#endif
  const bool seed_given = seed_opt->count() > 0;

  try {
    if (sim->parsed()) return cmd_simulate(config_path, seed_given, seed, sim_out);
    if (cip->parsed()) return cmd_classify_ip(cip_in, cip_out, cip_params);
    if (pca->parsed()) return cmd_pca(pca_in, pca_components, pca_scores, pca_model);
    if (ktr->parsed())
      return cmd_knn_train(ktr_calib, ktr_labels, ktr_rate, ktr_k, ktr_features, ktr_history,
                           seed, ktr_model);
    if (kpr->parsed()) return cmd_knn_predict(kpr_model, kpr_in, kpr_out);
    if (clu->parsed())
      return cmd_cluster(clu_scores, clu_params, clu_gap, clu_map, clu_model, clu_labels);
    if (her->parsed()) return cmd_herald(her_signal, her_idler, her_n, her_out);
    if (tom->parsed())
      return cmd_tomography(tom_probes, tom_n, tom_m, tom_bootstrap, seed, tom_out);
    if (met->parsed()) return cmd_metric(met_which, met_a, met_b, met_n, met_m);
    if (pip->parsed()) return cmd_pipeline(config_path, pip_out, seed_given, seed);
  } catch (const pnr::Error& e) {
    emit({{"error", {{"code", to_string(e.code())}, {"message", e.what()}}}});
    return e.code() == pnr::ErrorCode::ConfigError ? 2 : 1;
  } catch (const std::exception& e) {
    emit({{"error", {{"code", "INTERNAL"}, {"message", e.what()}}}});
    return 1;
  }
  return 0;
}
