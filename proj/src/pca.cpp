#include "pnr/pca.hpp"

#include <Eigen/SVD>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "pnr/errors.hpp"

namespace pnr {

using nlohmann::json;

namespace {

Eigen::MatrixXd centered(const TraceBatch& batch, const Eigen::VectorXd& mean) {
  Eigen::MatrixXd out = batch.traces.cast<double>();
  out.rowwise() -= mean.transpose();
  return out;
}

}  // namespace

PcaModel fit_pca(const TraceBatch& batch) {
  require(batch.n_traces() >= 2, ErrorCode::InsufficientTraces, "need at least 2 traces");
  const Eigen::Index d = batch.trace_length();

  PcaModel model;
  model.meta = batch.meta;
  model.n_fitted = batch.n_traces();
  model.mean = batch.traces.cast<double>().colwise().mean();

  Eigen::MatrixXd tilde = centered(batch, model.mean);
  Eigen::BDCSVD<Eigen::MatrixXd> svd(tilde, Eigen::ComputeFullV);

  model.components = svd.matrixV();  // D x D even when n < D
  model.singular_values = Eigen::VectorXd::Zero(d);
  model.singular_values.head(svd.singularValues().size()) = svd.singularValues();

  for (Eigen::Index j = 0; j < d; ++j) {
    Eigen::Index at = 0;
    model.components.col(j).cwiseAbs().maxCoeff(&at);
    if (model.components(at, j) < 0.0) model.components.col(j) = -model.components.col(j);
  }
  return model;
}

Eigen::MatrixXd pca_transform(const TraceBatch& batch, const PcaModel& model, int n_components) {
  require(batch.trace_length() == model.dim(), ErrorCode::LengthMismatch,
          "trace length differs from model dimension");
  require(n_components >= 1 && n_components <= model.dim(), ErrorCode::InvalidArgument,
          "n_components out of range");
  return centered(batch, model.mean) * model.components.leftCols(n_components);
}

TraceBatch pca_reconstruct(const Eigen::MatrixXd& scores, const PcaModel& model) {
  require(scores.cols() <= model.dim(), ErrorCode::LengthMismatch,
          "more score columns than model components");
  Eigen::MatrixXd v = scores * model.components.leftCols(scores.cols()).transpose();
  v.rowwise() += model.mean.transpose();
  TraceBatch out;
  out.meta = model.meta;
  out.traces = v.cast<float>();
  return out;
}

void save_pca_json(const PcaModel& model, const std::string& path) {
  json j;
  j["version"] = 1;
  j["n_fitted"] = model.n_fitted;
  j["meta"] = {{"sample_rate_hz", model.meta.sample_rate_hz},
               {"rep_rate_hz", model.meta.rep_rate_hz},
               {"samples_per_trace", model.meta.samples_per_trace},
               {"adc_range_v", model.meta.adc_range_v}};
  j["mean"] = std::vector<double>(model.mean.data(), model.mean.data() + model.mean.size());
  j["singular_values"] = std::vector<double>(
      model.singular_values.data(), model.singular_values.data() + model.singular_values.size());
  json rows = json::array();
  for (Eigen::Index r = 0; r < model.components.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < model.components.cols(); ++c) row.push_back(model.components(r, c));
    rows.push_back(std::move(row));
  }
  j["components"] = std::move(rows);

  std::ofstream out(path, std::ios::trunc);
  require(out.good(), ErrorCode::IoError, "cannot open " + path + " for writing");
  out << j.dump() << "\n";
  out.flush();
  require(out.good(), ErrorCode::IoError, "short write to " + path);
}

PcaModel load_pca_json(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::IoError, "cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    fail(ErrorCode::FormatError, path + ": " + e.what());
  }
  try {
    require(j.at("version").get<int>() == 1, ErrorCode::FormatError,
            path + ": unsupported version");
    PcaModel model;
    model.n_fitted = j.at("n_fitted").get<int64_t>();
    const auto& m = j.at("meta");
    model.meta.sample_rate_hz = m.at("sample_rate_hz").get<double>();
    model.meta.rep_rate_hz = m.at("rep_rate_hz").get<double>();
    model.meta.samples_per_trace = m.at("samples_per_trace").get<int>();
    model.meta.adc_range_v = m.at("adc_range_v").get<double>();
    const auto mean = j.at("mean").get<std::vector<double>>();
    const auto sv = j.at("singular_values").get<std::vector<double>>();
    const auto rows = j.at("components");
    const size_t d = mean.size();
    require(sv.size() == d && rows.size() == d, ErrorCode::FormatError,
            path + ": inconsistent model dimensions");
    model.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), d);
    model.singular_values = Eigen::Map<const Eigen::VectorXd>(sv.data(), d);
    model.components.resize(d, d);
    for (size_t r = 0; r < d; ++r) {
      const auto row = rows.at(r).get<std::vector<double>>();
      require(row.size() == d, ErrorCode::FormatError, path + ": ragged components matrix");
      for (size_t c = 0; c < d; ++c) model.components(r, c) = row[c];
    }
    return model;
  } catch (const json::exception& e) {
    fail(ErrorCode::FormatError, path + ": " + e.what());
  }
}

}  // namespace pnr
