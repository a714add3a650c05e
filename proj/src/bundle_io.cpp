#include "pnr/bundle_io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "pnr/errors.hpp"

namespace pnr {

using nlohmann::json;

namespace {

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::IoError, "cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    fail(ErrorCode::FormatError, path + ": " + e.what());
  }
  return j;
}

void write_text_file(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorCode::IoError, "cannot open " + path + " for writing");
  out << body;
  out.flush();
  require(out.good(), ErrorCode::IoError, "short write to " + path);
}

template <typename T>
T get_key(const json& j, const std::string& key, const std::string& path) {
  require(j.contains(key), ErrorCode::FormatError, path + ": missing key '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    fail(ErrorCode::FormatError, path + ": key '" + key + "' has wrong type");
  }
}

}  // namespace

void save_bundle(const LabeledBatch& labeled, const std::string& path_prefix) {
  const TraceBatch& batch = labeled.batch;
  batch.validate();
  if (labeled.has_labels) {
    require(static_cast<int64_t>(labeled.labels.size()) == batch.n_traces(),
            ErrorCode::LengthMismatch, "label count does not match trace count");
  }

  json meta;
  meta["version"] = 1;
  meta["sample_rate_hz"] = batch.meta.sample_rate_hz;
  meta["rep_rate_hz"] = batch.meta.rep_rate_hz;
  meta["samples_per_trace"] = batch.meta.samples_per_trace;
  meta["n_traces"] = batch.n_traces();
  meta["adc_range_v"] = batch.meta.adc_range_v;
  meta["dtype"] = "f32le";
  meta["has_labels"] = labeled.has_labels;
  write_text_file(path_prefix + ".meta.json", meta.dump(2) + "\n");

  {
    std::ofstream out(path_prefix + ".traces.bin", std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorCode::IoError, "cannot open " + path_prefix + ".traces.bin");
    // RowMajor storage means .data() already is trace-after-trace.
    out.write(reinterpret_cast<const char*>(batch.traces.data()),
              static_cast<std::streamsize>(sizeof(float)) * batch.traces.size());
    out.flush();
    require(out.good(), ErrorCode::IoError, "short write to " + path_prefix + ".traces.bin");
  }

  if (labeled.has_labels) {
    write_labels_csv(labeled.labels, path_prefix + ".labels.csv");
  } else {
    std::remove((path_prefix + ".labels.csv").c_str());
  }
}

void save_bundle(const TraceBatch& batch, const std::string& path_prefix) {
  LabeledBatch unlabeled;
  unlabeled.batch = batch;
  unlabeled.has_labels = false;
  save_bundle(unlabeled, path_prefix);
}

LabeledBatch load_bundle(const std::string& path_prefix) {
  const std::string meta_path = path_prefix + ".meta.json";
  json meta = read_json_file(meta_path);

  const auto version = get_key<int64_t>(meta, "version", meta_path);
  require(version == 1, ErrorCode::FormatError,
          meta_path + ": unsupported version " + std::to_string(version));
  const auto dtype = get_key<std::string>(meta, "dtype", meta_path);
  require(dtype == "f32le", ErrorCode::FormatError, meta_path + ": unsupported dtype " + dtype);

  LabeledBatch out;
  out.batch.meta.sample_rate_hz = get_key<double>(meta, "sample_rate_hz", meta_path);
  out.batch.meta.rep_rate_hz = get_key<double>(meta, "rep_rate_hz", meta_path);
  out.batch.meta.samples_per_trace = get_key<int64_t>(meta, "samples_per_trace", meta_path);
  out.batch.meta.adc_range_v = get_key<double>(meta, "adc_range_v", meta_path);
  const auto n_traces = get_key<int64_t>(meta, "n_traces", meta_path);
  out.has_labels = get_key<bool>(meta, "has_labels", meta_path);
  require(n_traces >= 1, ErrorCode::FormatError, meta_path + ": n_traces must be positive");
  out.batch.meta.validate();

  const std::string bin_path = path_prefix + ".traces.bin";
  std::ifstream bin(bin_path, std::ios::binary | std::ios::ate);
  require(bin.good(), ErrorCode::IoError, "cannot open " + bin_path);
  const int64_t n_bytes = static_cast<int64_t>(bin.tellg());
  const int64_t want = n_traces * out.batch.meta.samples_per_trace *
                       static_cast<int64_t>(sizeof(float));
  require(n_bytes == want, ErrorCode::FormatError,
          bin_path + ": payload is " + std::to_string(n_bytes) + " bytes, expected " +
              std::to_string(want));
  bin.seekg(0);
  out.batch.traces.resize(n_traces, out.batch.meta.samples_per_trace);
  bin.read(reinterpret_cast<char*>(out.batch.traces.data()), want);
  require(bin.good(), ErrorCode::IoError, "short read from " + bin_path);

  if (out.has_labels) {
    out.labels = read_labels_csv(path_prefix + ".labels.csv");
    require(static_cast<int64_t>(out.labels.size()) == n_traces, ErrorCode::FormatError,
            path_prefix + ".labels.csv: expected " + std::to_string(n_traces) + " rows, got " +
                std::to_string(out.labels.size()));
  }

  if (out.has_labels) {
    out.validate();
  } else {
    out.batch.validate();
  }
  return out;
}

void write_labels_csv(const std::vector<int32_t>& labels, const std::string& path) {
  std::ostringstream body;
  for (int32_t v : labels) body << v << '\n';
  write_text_file(path, body.str());
}

std::vector<int32_t> read_labels_csv(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::IoError, "cannot open " + path);
  std::vector<int32_t> labels;
  std::string line;
  int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    size_t pos = 0;
    int32_t value = 0;
    try {
      value = std::stoi(line, &pos);
    } catch (const std::exception&) {
      fail(ErrorCode::FormatError, path + ":" + std::to_string(lineno) + ": not an integer");
    }
    while (pos < line.size() && (line[pos] == ' ' || line[pos] == '\r')) ++pos;
    require(pos == line.size(), ErrorCode::FormatError,
            path + ":" + std::to_string(lineno) + ": trailing junk after integer");
    labels.push_back(value);
  }
  return labels;
}

void write_distribution_json(const PhotonDistribution& dist, const std::string& path) {
  json j;
  j["truncation"] = dist.truncation();
  j["probs"] = std::vector<double>(dist.probs.data(), dist.probs.data() + dist.probs.size());
  write_text_file(path, j.dump(2) + "\n");
}

void write_matrix_csv(const Eigen::MatrixXd& mat, const std::string& path) {
  std::ostringstream body;
  body.precision(17);
  for (Eigen::Index r = 0; r < mat.rows(); ++r) {
    for (Eigen::Index c = 0; c < mat.cols(); ++c) {
      if (c) body << ',';
      body << mat(r, c);
    }
    body << '\n';
  }
  write_text_file(path, body.str());
}

Eigen::MatrixXd read_matrix_csv(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::IoError, "cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        size_t pos = 0;
        row.push_back(std::stod(cell, &pos));
        while (pos < cell.size() && cell[pos] == ' ') ++pos;
        require(pos == cell.size(), ErrorCode::FormatError,
                path + ":" + std::to_string(lineno) + ": trailing junk in cell");
      } catch (const Error&) {
        throw;
      } catch (const std::exception&) {
        fail(ErrorCode::FormatError, path + ":" + std::to_string(lineno) + ": not a number");
      }
    }
    require(rows.empty() || row.size() == rows.front().size(), ErrorCode::FormatError,
            path + ":" + std::to_string(lineno) + ": ragged row");
    rows.push_back(std::move(row));
  }
  require(!rows.empty(), ErrorCode::FormatError, path + ": no rows");
  Eigen::MatrixXd mat(rows.size(), rows.front().size());
  for (size_t r = 0; r < rows.size(); ++r)
    for (size_t c = 0; c < rows[r].size(); ++c) mat(r, c) = rows[r][c];
  return mat;
}

PhotonDistribution read_distribution_json(const std::string& path) {
  json j = read_json_file(path);
  const auto probs = get_key<std::vector<double>>(j, "probs", path);
  require(!probs.empty(), ErrorCode::FormatError, path + ": probs must be non-empty");
  const auto truncation = get_key<int64_t>(j, "truncation", path);
  require(truncation == static_cast<int64_t>(probs.size()) - 1, ErrorCode::FormatError,
          path + ": truncation does not match probs length");
  PhotonDistribution dist;
  dist.probs = Eigen::Map<const Eigen::VectorXd>(probs.data(), probs.size());
  for (int64_t i = 0; i < dist.probs.size(); ++i) {
    require(dist.probs[i] >= 0.0, ErrorCode::FormatError, path + ": negative probability");
  }
  return dist;
}

}  // namespace pnr
