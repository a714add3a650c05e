#include "pnr/analysis.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>

#include "pnr/errors.hpp"
#include "pnr/rng.hpp"

namespace pnr {

void ConfusionMatrix::validate() const {
  require(theta.rows() >= 1 && theta.cols() >= 1, ErrorCode::InvalidArgument,
          "empty confusion matrix");
  require((theta.array() >= 0.0).all() && (theta.array() <= 1.0).all(),
          ErrorCode::InvalidArgument, "entries must lie in [0, 1]");
  for (Eigen::Index m = 0; m < theta.cols(); ++m)
    require(std::abs(theta.col(m).sum() - 1.0) <= 1e-6, ErrorCode::InvalidArgument,
            "column " + std::to_string(m) + " is off the simplex");
}

void JointDistribution::validate() const {
  require(probs.rows() >= 1 && probs.cols() >= 1, ErrorCode::InvalidArgument,
          "empty joint distribution");
  require((probs.array() >= 0.0).all(), ErrorCode::InvalidArgument, "negative probability");
  require(std::abs(probs.sum() - 1.0) <= 1e-9, ErrorCode::InvalidArgument,
          "joint probabilities do not sum to 1");
}

PhotonDistribution poisson_dist(double mu, int M) {
  require(mu >= 0.0, ErrorCode::InvalidArgument, "mu must be non-negative");
  require(M >= 0, ErrorCode::InvalidArgument, "truncation must be non-negative");
  PhotonDistribution dist;
  dist.probs.resize(M + 1);
  double p = std::exp(-mu);
  dist.probs[0] = p;
  for (int n = 1; n <= M; ++n) {
    p *= mu / n;
    dist.probs[n] = p;
  }
  return dist;
}

double poisson_tail_mass(double mu, int M) {
  return std::max(0.0, 1.0 - poisson_dist(mu, M).total());
}

namespace {

// pmf rows Bin(a | n, eta) for n = 0..n_max, a = 0..n.
Eigen::MatrixXd binomial_table(int n_max, double eta) {
  Eigen::MatrixXd table = Eigen::MatrixXd::Zero(n_max + 1, n_max + 1);
  table(0, 0) = 1.0;
  for (int n = 1; n <= n_max; ++n)
    for (int a = 0; a <= n; ++a)
      table(n, a) = (a < n ? table(n - 1, a) * (1.0 - eta) : 0.0) +
                    (a > 0 ? table(n - 1, a - 1) * eta : 0.0);
  return table;
}

}  // namespace

JointDistribution tmsv_joint_dist(double lambda, double eta_signal, double eta_idler, int M) {
  require(std::abs(lambda) < 1.0, ErrorCode::InvalidArgument, "|lambda| must be < 1");
  require(eta_signal >= 0.0 && eta_signal <= 1.0 && eta_idler >= 0.0 && eta_idler <= 1.0,
          ErrorCode::InvalidArgument, "eta must lie in [0, 1]");
  require(M >= 0, ErrorCode::InvalidArgument, "truncation must be non-negative");

  const double r = lambda * lambda;
  const int n_max = M + 20;
  const Eigen::MatrixXd bs = binomial_table(n_max, eta_signal);
  const Eigen::MatrixXd bi = binomial_table(n_max, eta_idler);

  JointDistribution joint;
  joint.probs = Eigen::MatrixXd::Zero(M + 1, M + 1);
  double w = 1.0 - r;
  for (int n = 0; n <= n_max; ++n) {
    for (int a = 0; a <= std::min(n, M); ++a)
      for (int b = 0; b <= std::min(n, M); ++b) joint.probs(a, b) += w * bs(n, a) * bi(n, b);
    w *= r;
  }
  return joint;
}

JointDistribution joint_from_labels(std::span<const int32_t> signal,
                                    std::span<const int32_t> idler, int truncation) {
  require(signal.size() == idler.size(), ErrorCode::LengthMismatch,
          "signal and idler label lists differ in length");
  require(!signal.empty(), ErrorCode::InvalidArgument, "empty label lists");
  require(truncation >= 0, ErrorCode::InvalidArgument, "truncation must be non-negative");

  JointDistribution joint;
  joint.probs = Eigen::MatrixXd::Zero(truncation + 1, truncation + 1);
  int64_t classified = 0;
  for (size_t i = 0; i < signal.size(); ++i) {
    if (signal[i] == kUnclassified || idler[i] == kUnclassified) continue;
    ++classified;
    if (signal[i] <= truncation && idler[i] <= truncation)
      joint.probs(signal[i], idler[i]) += 1.0;
  }
  require(classified > 0, ErrorCode::AllUnclassified, "every pulse pair is unclassified");
  joint.probs /= static_cast<double>(classified);
  return joint;
}

double tvd(const PhotonDistribution& p, const PhotonDistribution& q) {
  const Eigen::Index n = std::max(p.probs.size(), q.probs.size());
  double sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double pi = i < p.probs.size() ? p.probs[i] : 0.0;
    const double qi = i < q.probs.size() ? q.probs[i] : 0.0;
    sum += std::abs(pi - qi);
  }
  return 0.5 * sum;
}

namespace {

// Euclidean projection onto {x >= 0, sum x = 1} (sort-based).
void project_to_simplex(Eigen::Ref<Eigen::VectorXd> v) {
  const Eigen::Index n = v.size();
  std::vector<double> u(v.data(), v.data() + n);
  std::sort(u.begin(), u.end(), std::greater<>());
  double csum = 0.0, tau = 0.0;
  int rho = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    csum += u[i];
    const double t = (csum - 1.0) / static_cast<double>(i + 1);
    if (u[i] - t > 0.0) {
      rho = static_cast<int>(i + 1);
      tau = t;
    }
  }
  for (Eigen::Index i = 0; i < n; ++i) v[i] = std::max(v[i] - tau, 0.0);
}

struct SolveOutcome {
  bool converged = false;
  int iterations = 0;
  double objective = 0.0;
};

// Projected gradient on f(T) = ||P - T Q||_F^2. The gradient is Lipschitz
// with constant 2*lmax(Q Q^T), so stepping the half-gradient by 1/lmax
// descends monotonically.
SolveOutcome solve_povm(const Eigen::MatrixXd& p, const Eigen::MatrixXd& q,
                        Eigen::MatrixXd& theta, const PovmOptions& options,
                        std::vector<double>* history) {
  const Eigen::MatrixXd gram = q * q.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  const double lmax = eig.eigenvalues().maxCoeff();
  require(lmax > 0.0, ErrorCode::Degenerate, "probe moment matrix has no mass");
  const double step = 1.0 / lmax;

  SolveOutcome out;
  double prev = (p - theta * q).squaredNorm();
  if (history) history->push_back(prev);
  for (int it = 1; it <= options.max_iterations; ++it) {
    const Eigen::MatrixXd half_grad = (theta * q - p) * q.transpose();
    theta -= step * half_grad;
    for (Eigen::Index m = 0; m < theta.cols(); ++m) project_to_simplex(theta.col(m));
    const double obj = (p - theta * q).squaredNorm();
    if (history) history->push_back(obj);
    out.iterations = it;
    out.objective = obj;
    if (prev - obj < options.rel_tolerance * std::max(prev, 1e-300)) {
      out.converged = true;
      break;
    }
    prev = obj;
  }
  return out;
}

}  // namespace

PovmResult reconstruct_povm(const std::vector<ProbeRecord>& probes, int N, int M,
                            const PovmOptions& options) {
  require(N >= 0 && M >= 0, ErrorCode::InvalidArgument, "truncations must be non-negative");
  std::vector<double> mus;
  for (const auto& probe : probes) {
    require(probe.mu >= 0.0 && probe.mu_sigma >= 0.0 && probe.n_pulses >= 1,
            ErrorCode::InvalidArgument, "bad probe record");
    require(probe.measured.probs.size() == N + 1, ErrorCode::LengthMismatch,
            "measured distribution truncation differs from N");
    mus.push_back(probe.mu);
  }
  std::sort(mus.begin(), mus.end());
  mus.erase(std::unique(mus.begin(), mus.end()), mus.end());
  require(mus.size() >= 2, ErrorCode::TooFewProbes, "need at least 2 probes with distinct mu");

  PovmResult result;
  if (mus.front() > 1.0 || mus.back() < static_cast<double>(M))
    result.warnings.push_back(
        "probe mean photon numbers span [" + std::to_string(mus.front()) + ", " +
        std::to_string(mus.back()) + "]; columns far outside this range are weakly constrained");

  const auto j_count = static_cast<Eigen::Index>(probes.size());
  Eigen::MatrixXd p(N + 1, j_count), q(M + 1, j_count);
  for (Eigen::Index j = 0; j < j_count; ++j) {
    p.col(j) = probes[j].measured.probs;
    q.col(j) = poisson_dist(probes[j].mu, M).probs;
  }

  Eigen::MatrixXd theta =
      Eigen::MatrixXd::Constant(N + 1, M + 1, 1.0 / static_cast<double>(N + 1));
  const SolveOutcome outcome = solve_povm(p, q, theta, options, &result.objective_history);
  result.theta.theta = theta;
  result.converged = outcome.converged;
  result.iterations = outcome.iterations;
  result.objective = outcome.objective;
  if (!outcome.converged)
    result.warnings.push_back("NON_CONVERGED: iteration cap reached before the relative "
                              "decrease fell under the tolerance");

  if (options.bootstrap > 0) {
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(N + 1, M + 1);
    Eigen::MatrixXd sum_sq = Eigen::MatrixXd::Zero(N + 1, M + 1);
    for (int b = 0; b < options.bootstrap; ++b) {
      SplitMix64 rng(derive_stream(options.seed, static_cast<uint64_t>(b)));
      Eigen::MatrixXd pb(N + 1, j_count), qb(M + 1, j_count);
      for (Eigen::Index j = 0; j < j_count; ++j) {
        // Multinomial counts over the N+1 bins by binomial conditioning;
        // sub-normalized residual mass stays out, mirroring the input.
        const auto& probs = probes[j].measured.probs;
        int64_t remaining = probes[j].n_pulses;
        double rem_mass = 1.0;
        for (int n = 0; n <= N; ++n) {
          const double share =
              rem_mass > 0.0 ? std::clamp(probs[n] / rem_mass, 0.0, 1.0) : 0.0;
          const int64_t c = rng.binomial(remaining, share);
          pb(n, j) = static_cast<double>(c) / static_cast<double>(probes[j].n_pulses);
          remaining -= c;
          rem_mass -= probs[n];
        }
        const double mu_b =
            std::max(0.0, probes[j].mu + probes[j].mu_sigma * rng.normal());
        qb.col(j) = poisson_dist(mu_b, M).probs;
      }
      Eigen::MatrixXd theta_b = theta;  // warm start from the point estimate
      solve_povm(pb, qb, theta_b, options, nullptr);
      sum += theta_b;
      sum_sq += theta_b.cwiseProduct(theta_b);
    }
    const double inv_b = 1.0 / static_cast<double>(options.bootstrap);
    const Eigen::MatrixXd mean = sum * inv_b;
    Eigen::MatrixXd var = sum_sq * inv_b - mean.cwiseProduct(mean);
    if (options.bootstrap > 1)
      var *= static_cast<double>(options.bootstrap) / (options.bootstrap - 1.0);
    result.bootstrap_sigma = var.cwiseMax(0.0).cwiseSqrt();
  }
  return result;
}

double povm_fidelity(const Eigen::MatrixXd& theta, const Eigen::MatrixXd& theta_ref, int n_rows,
                     int n_cols) {
  require(n_rows >= 1 && n_cols >= 1, ErrorCode::InvalidArgument, "need at least one row/col");
  require(theta.rows() >= n_rows && theta.cols() >= n_cols && theta_ref.rows() >= n_rows &&
              theta_ref.cols() >= n_cols,
          ErrorCode::LengthMismatch, "matrices do not cover the requested block");
  double total = 0.0;
  for (int n = 0; n < n_rows; ++n) {
    double bc = 0.0, mass_a = 0.0, mass_b = 0.0;
    for (int m = 0; m < n_cols; ++m) {
      const double a = theta(n, m), b = theta_ref(n, m);
      bc += std::sqrt(a * b);
      mass_a += a;
      mass_b += b;
    }
    if (mass_a <= 0.0 || mass_b <= 0.0) {
      total += (mass_a <= 0.0 && mass_b <= 0.0) ? 1.0 : 0.0;
    } else {
      total += bc * bc / (mass_a * mass_b);
    }
  }
  return total / static_cast<double>(n_rows);
}

double distribution_fidelity(const PhotonDistribution& p, const PhotonDistribution& q) {
  const Eigen::Index n = std::max(p.probs.size(), q.probs.size());
  double bc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double pi = i < p.probs.size() ? p.probs[i] : 0.0;
    const double qi = i < q.probs.size() ? q.probs[i] : 0.0;
    bc += std::sqrt(pi * qi);
  }
  return bc * bc;
}

double distribution_fidelity(const JointDistribution& p, const JointDistribution& q) {
  const Eigen::Index rows = std::max(p.probs.rows(), q.probs.rows());
  const Eigen::Index cols = std::max(p.probs.cols(), q.probs.cols());
  PhotonDistribution fp, fq;
  fp.probs = Eigen::VectorXd::Zero(rows * cols);
  fq.probs = Eigen::VectorXd::Zero(rows * cols);
  for (Eigen::Index r = 0; r < p.probs.rows(); ++r)
    for (Eigen::Index c = 0; c < p.probs.cols(); ++c) fp.probs[r * cols + c] = p.probs(r, c);
  for (Eigen::Index r = 0; r < q.probs.rows(); ++r)
    for (Eigen::Index c = 0; c < q.probs.cols(); ++c) fq.probs[r * cols + c] = q.probs(r, c);
  return distribution_fidelity(fp, fq);
}

PhotonDistribution herald(const JointDistribution& joint, int n_idler) {
  require(n_idler >= 0 && n_idler < joint.probs.cols(), ErrorCode::InvalidArgument,
          "herald photon number outside the joint grid");
  const double mass = joint.probs.col(n_idler).sum();
  require(mass > 0.0, ErrorCode::EmptyHerald,
          "no probability mass at idler = " + std::to_string(n_idler));
  PhotonDistribution dist;
  dist.probs = joint.probs.col(n_idler) / mass;
  return dist;
}

PhotonDistribution herald(std::span<const int32_t> signal_labels,
                          std::span<const int32_t> idler_labels, int n_idler) {
  require(signal_labels.size() == idler_labels.size(), ErrorCode::LengthMismatch,
          "signal and idler label lists differ in length");
  require(n_idler >= 0, ErrorCode::InvalidArgument, "herald photon number must be >= 0");
  int32_t max_signal = 0;
  int64_t kept = 0;
  for (size_t i = 0; i < signal_labels.size(); ++i) {
    if (signal_labels[i] == kUnclassified || idler_labels[i] == kUnclassified) continue;
    if (idler_labels[i] != n_idler) continue;
    ++kept;
    max_signal = std::max(max_signal, signal_labels[i]);
  }
  require(kept > 0, ErrorCode::EmptyHerald,
          "no classified pulse pairs with idler = " + std::to_string(n_idler));
  PhotonDistribution dist;
  dist.probs = Eigen::VectorXd::Zero(max_signal + 1);
  for (size_t i = 0; i < signal_labels.size(); ++i) {
    if (signal_labels[i] == kUnclassified || idler_labels[i] == kUnclassified) continue;
    if (idler_labels[i] != n_idler) continue;
    dist.probs[signal_labels[i]] += 1.0;
  }
  dist.probs /= static_cast<double>(kept);
  return dist;
}

EfficiencyFit fit_efficiency(const std::vector<EfficiencyPoint>& points) {
  require(points.size() >= 2, ErrorCode::InvalidArgument, "need at least 2 points");
  bool any_input = false;
  for (const auto& pt : points) {
    require(pt.sigma_in > 0.0 && pt.sigma_meas > 0.0, ErrorCode::InvalidArgument,
            "all sigmas must be positive");
    if (pt.mu_in != 0.0) any_input = true;
  }
  require(any_input, ErrorCode::Degenerate, "all input means are zero");

  auto objective = [&](double eta) {
    double sum = 0.0;
    for (const auto& pt : points) {
      const double resid = pt.mu_meas - eta * pt.mu_in;
      sum += resid * resid / (pt.sigma_meas * pt.sigma_meas + eta * eta * pt.sigma_in * pt.sigma_in);
    }
    return sum;
  };

  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double lo = 1e-12, hi = 2.0;
  double a = hi - inv_phi * (hi - lo);
  double b = lo + inv_phi * (hi - lo);
  double fa = objective(a), fb = objective(b);
  while (hi - lo > 1e-9) {
    if (fa < fb) {
      hi = b;
      b = a;
      fb = fa;
      a = hi - inv_phi * (hi - lo);
      fa = objective(a);
    } else {
      lo = a;
      a = b;
      fa = fb;
      b = lo + inv_phi * (hi - lo);
      fb = objective(b);
    }
  }

  EfficiencyFit fit;
  fit.eta = 0.5 * (lo + hi);
  const double h = std::max(1e-6, 1e-6 * fit.eta);
  const double curvature =
      (objective(fit.eta + h) - 2.0 * objective(fit.eta) + objective(fit.eta - h)) / (h * h);
  fit.eta_sigma = curvature > 0.0 ? std::sqrt(2.0 / curvature)
                                  : std::numeric_limits<double>::infinity();
  return fit;
}

}  // namespace pnr
