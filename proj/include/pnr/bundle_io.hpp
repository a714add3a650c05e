#ifndef PNR_BUNDLE_IO_HPP
#define PNR_BUNDLE_IO_HPP

#include <string>
#include <vector>

#include "pnr/types.hpp"

// On-disk bundle layout (little endian throughout):
//   <name>.meta.json   version, rates, shape, adc range, dtype, has_labels
//   <name>.traces.bin  raw f32, row major, n_traces * samples_per_trace values
//   <name>.labels.csv  one integer per line, -1 = unclassified (iff has_labels)

namespace pnr {

void save_bundle(const LabeledBatch& labeled, const std::string& path_prefix);
void save_bundle(const TraceBatch& batch, const std::string& path_prefix);
LabeledBatch load_bundle(const std::string& path_prefix);

void write_labels_csv(const std::vector<int32_t>& labels, const std::string& path);
std::vector<int32_t> read_labels_csv(const std::string& path);

/// Distributions travel as JSON {"probs": [...], "truncation": M, ...extras}.
void write_distribution_json(const PhotonDistribution& dist, const std::string& path);
PhotonDistribution read_distribution_json(const std::string& path);

/// Plain comma-separated rows, full double precision (for factor scores).
void write_matrix_csv(const Eigen::MatrixXd& mat, const std::string& path);
Eigen::MatrixXd read_matrix_csv(const std::string& path);

}  // namespace pnr

#endif
