#ifndef PNR_ANALYSIS_HPP
#define PNR_ANALYSIS_HPP

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pnr/types.hpp"

namespace pnr {

struct ProbeRecord {
  double mu = 0.0;        // mean photons per pulse from the power meter
  double mu_sigma = 0.0;  // absolute uncertainty on mu
  PhotonDistribution measured;
  int64_t n_pulses = 0;
};

struct ConfusionMatrix {
  Eigen::MatrixXd theta;  // (N+1) reported x (M+1) actual

  int reported_truncation() const { return static_cast<int>(theta.rows()) - 1; }
  int actual_truncation() const { return static_cast<int>(theta.cols()) - 1; }
  /// Entries in [0,1]; every column on the simplex within 1e-6.
  void validate() const;
};

struct JointDistribution {
  Eigen::MatrixXd probs;  // (signal n, idler m)

  int truncation() const { return static_cast<int>(probs.rows()) - 1; }
  double total() const { return probs.sum(); }
  /// Unit total mass within 1e-9; truncated analytic joints are legitimately
  /// sub-normalized and skip this.
  void validate() const;
};

/// p(n) for n <= M; the tail mass past M is left out, never folded into p(M).
PhotonDistribution poisson_dist(double mu, int M);
double poisson_tail_mass(double mu, int M);

/// p(a,b) = sum_{n >= max(a,b)} (1-|l|^2)|l|^(2n) Bin(a|n,eta_s) Bin(b|n,eta_i),
/// internal n truncated at M+20. Sub-normalized by the omitted tail.
JointDistribution tmsv_joint_dist(double lambda, double eta_signal, double eta_idler, int M);

/// Pairs with an unclassified label in either mode are dropped from the
/// denominator; classified pairs beyond the truncation stay in the
/// denominator but fall outside the grid, matching the truncated analytic
/// joint.
JointDistribution joint_from_labels(std::span<const int32_t> signal,
                                    std::span<const int32_t> idler, int truncation);

/// 1/2 sum |p_i - q_i|; the shorter vector is zero-padded.
double tvd(const PhotonDistribution& p, const PhotonDistribution& q);

struct PovmOptions {
  int max_iterations = 50000;
  double rel_tolerance = 1e-10;
  int bootstrap = 0;  // replica count; 0 disables
  uint64_t seed = 0;
};

struct PovmResult {
  ConfusionMatrix theta;
  bool converged = false;
  int iterations = 0;
  double objective = 0.0;
  std::vector<double> objective_history;  // one entry per iteration
  Eigen::MatrixXd bootstrap_sigma;        // empty unless bootstrap > 0
  std::vector<std::string> warnings;
};

/// Least squares min sum_j ||p_j - Theta q_j||^2 with each column of Theta
/// on the probability simplex; projected gradient with the exact Lipschitz
/// step, so the objective never increases. Bootstrap replicas resample the
/// counts multinomially, jitter mu by N(0, mu_sigma) clamped at 0, re-solve
/// warm-started from the point estimate, and aggregate in replica order.
PovmResult reconstruct_povm(const std::vector<ProbeRecord>& probes, int N, int M,
                            const PovmOptions& options = {});

/// Row-averaged fidelity over the leading n_rows x n_cols blocks; rows with
/// zero mass count 1 when both are empty, else 0.
double povm_fidelity(const Eigen::MatrixXd& theta, const Eigen::MatrixXd& theta_ref, int n_rows,
                     int n_cols);

/// Bhattacharyya-squared (sum_i sqrt(p_i q_i))^2 with zero-padding.
double distribution_fidelity(const PhotonDistribution& p, const PhotonDistribution& q);
double distribution_fidelity(const JointDistribution& p, const JointDistribution& q);

/// p(signal | idler = n_idler), renormalized.
PhotonDistribution herald(const JointDistribution& joint, int n_idler);
PhotonDistribution herald(std::span<const int32_t> signal_labels,
                          std::span<const int32_t> idler_labels, int n_idler);

struct EfficiencyPoint {
  double mu_in = 0.0;
  double sigma_in = 0.0;
  double mu_meas = 0.0;
  double sigma_meas = 0.0;
};

struct EfficiencyFit {
  double eta = 0.0;
  double eta_sigma = 0.0;
};

/// Straight line through the origin with errors in both variables:
/// minimizes sum (mu_meas - eta*mu_in)^2 / (sigma_meas^2 + eta^2 sigma_in^2)
/// by golden section on (0, 2]; the uncertainty comes from the local
/// curvature (delta-chi-squared of 1).
EfficiencyFit fit_efficiency(const std::vector<EfficiencyPoint>& points);

}  // namespace pnr

#endif
