#ifndef PNR_PCA_HPP
#define PNR_PCA_HPP

#include <string>

#include "pnr/types.hpp"

namespace pnr {

struct PcaModel {
  Eigen::VectorXd mean;             // length D
  Eigen::MatrixXd components;       // D x D, columns are principal components
  Eigen::VectorXd singular_values;  // length D, non-increasing, zero-padded past rank
  int64_t n_fitted = 0;
  AcquisitionMeta meta;

  Eigen::Index dim() const { return mean.size(); }
};

/// SVD of the mean-subtracted trace matrix. Signs are fixed by making each
/// component's largest-magnitude element positive (first index wins ties), so
/// repeated fits orient identically. A zero-variance batch yields a valid
/// model with all singular values zero.
PcaModel fit_pca(const TraceBatch& batch);

/// Factor scores F = (V - 1*mean^T) * Q[:, 0..n_components).
Eigen::MatrixXd pca_transform(const TraceBatch& batch, const PcaModel& model, int n_components);

/// v_i = sum_j F_ij q_j + mean; accepts any score width <= D.
TraceBatch pca_reconstruct(const Eigen::MatrixXd& scores, const PcaModel& model);

void save_pca_json(const PcaModel& model, const std::string& path);
PcaModel load_pca_json(const std::string& path);

}  // namespace pnr

#endif
