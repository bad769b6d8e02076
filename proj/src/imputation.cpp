#include "twophase/imputation.hpp"

#include <cmath>
#include <limits>

namespace twophase {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}

double ExposureModel::mean_at(const Eigen::Ref<const VectorXd>& z) const {
  if (coef.size() != z.size() + 1) {
    throw std::invalid_argument("exposure model: covariate dimension mismatch");
  }
  return coef[0] + coef.tail(z.size()).dot(z);
}

void ImputationConfig::validate() const {
  if (grid_size < 2) throw std::invalid_argument("imputation: grid needs C >= 2");
  if (num_imputations < 2) throw std::invalid_argument("imputation: need M >= 2");
  const bool has_range = std::isfinite(grid_lo) || std::isfinite(grid_hi);
  if (has_range && !(grid_lo < grid_hi)) {
    throw std::invalid_argument("imputation: grid range must satisfy lo < hi");
  }
}

ExposureModel fit_exposure_ipw(const Cohort& phase2, const VectorXd& pi) {
  const int n = phase2.size();
  if (pi.size() != n) throw std::invalid_argument("fit_exposure_ipw: pi length mismatch");
  const int p = 1 + static_cast<int>(phase2.z.cols());
  MatrixXd A(n, p);
  A.col(0).setOnes();
  A.rightCols(p - 1) = phase2.z;
  VectorXd w(n);
  for (int i = 0; i < n; ++i) {
    if (!std::isfinite(phase2.x[i])) throw std::invalid_argument("fit_exposure_ipw: x missing");
    if (!(pi[i] > 0.0 && pi[i] <= 1.0)) throw std::invalid_argument("fit_exposure_ipw: pi outside (0,1]");
    w[i] = 1.0 / pi[i];
  }

  const MatrixXd AtWA = A.transpose() * w.asDiagonal() * A;
  Eigen::FullPivLU<MatrixXd> lu(AtWA);
  if (lu.rank() < p) {
    throw std::invalid_argument("fit_exposure_ipw: covariate matrix is rank deficient");
  }
  ExposureModel model;
  model.coef = lu.solve(A.transpose() * (w.asDiagonal() * phase2.x));

  const VectorXd residuals = phase2.x - A * model.coef;
  const double sigma2 = (w.array() * residuals.array().square()).sum() / w.sum();
  if (!(sigma2 > 0.0)) throw std::invalid_argument("fit_exposure_ipw: degenerate residual scale");
  model.sigma = std::sqrt(sigma2);

  // Design-based sandwich for the weighted estimating equations.
  const MatrixXd bread = lu.inverse();
  const VectorXd we2 = (w.array() * residuals.array()).square();
  const MatrixXd meat = A.transpose() * we2.asDiagonal() * A;
  model.cov_coef = bread * meat * bread;
  return model;
}

VectorXd imputation_weights(const PoParams& delta, const ExposureModel& omega, int y,
                            const Eigen::Ref<const VectorXd>& z, const VectorXd& grid) {
  const int k = delta.n_levels();
  if (y < 1 || y > k) throw std::invalid_argument("imputation_weights: y outside 1..k");
  if (!delta.valid()) throw std::invalid_argument("imputation_weights: invalid response parameters");
  const int c_n = static_cast<int>(grid.size());
  if (c_n < 1) throw std::invalid_argument("imputation_weights: empty grid");

  const double eta_z = delta.beta.size() > 1 ? delta.beta.tail(delta.beta.size() - 1).dot(z) : 0.0;
  const double beta_x = delta.beta.size() > 0 ? delta.beta[0] : 0.0;
  const double mu = omega.mean_at(z);

  // log w_c = log P(y | x_c, z) - (x_c - mu)^2 / (2 sigma^2), constants dropped.
  Eigen::ArrayXd eta = beta_x * grid.array() + eta_z;
  Eigen::ArrayXd cum_hi = y <= k - 1
      ? (1.0 / (1.0 + (-(delta.alphas[y - 1] + eta)).exp()))
      : Eigen::ArrayXd::Ones(c_n);
  Eigen::ArrayXd cum_lo = y >= 2
      ? (1.0 / (1.0 + (-(delta.alphas[y - 2] + eta)).exp()))
      : Eigen::ArrayXd::Zero(c_n);
  Eigen::ArrayXd prob = cum_hi - cum_lo;
  Eigen::ArrayXd t = (grid.array() - mu) / omega.sigma;
  Eigen::ArrayXd logw = prob.log() - 0.5 * t.square();

  const double m = logw.maxCoeff();
  if (!std::isfinite(m)) {
    throw std::runtime_error("imputation_weights: all candidate weights vanished");
  }
  Eigen::ArrayXd w = (logw - m).exp();
  return (w / w.sum()).matrix();
}

FitResult rubin_pool(const std::vector<VectorXd>& estimates, const std::vector<MatrixXd>& covs) {
  const int m = static_cast<int>(estimates.size());
  if (m < 2) throw std::invalid_argument("rubin_pool: need at least two imputations");
  if (covs.size() != estimates.size()) throw std::invalid_argument("rubin_pool: list lengths differ");
  const Eigen::Index d = estimates.front().size();
  for (int i = 0; i < m; ++i) {
    if (estimates[i].size() != d || covs[i].rows() != d || covs[i].cols() != d) {
      throw std::invalid_argument("rubin_pool: dimension mismatch across imputations");
    }
  }

  VectorXd pooled = VectorXd::Zero(d);
  for (const auto& e : estimates) pooled += e;
  pooled /= m;

  MatrixXd within = MatrixXd::Zero(d, d);
  for (const auto& c : covs) within += c;
  within /= m;

  MatrixXd between = MatrixXd::Zero(d, d);
  for (const auto& e : estimates) {
    const VectorXd dev = e - pooled;
    between += dev * dev.transpose();
  }
  between /= (m - 1);

  const double infl = 1.0 + 1.0 / m;
  FitResult out;
  out.estimate = pooled;
  out.cov = within + infl * between;
  out.converged = true;
  out.iterations = m;
  out.loglik = kNaN;
  out.fmi.resize(d);
  out.mi_df.resize(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    const double b = between(j, j);
    const double w = within(j, j);
    if (b <= 0.0) {
      out.mi_df[j] = std::numeric_limits<double>::infinity();
      out.fmi[j] = 0.0;
      continue;
    }
    const double r = infl * b / w;
    const double df = (m - 1) * std::pow(1.0 + 1.0 / r, 2.0);
    out.mi_df[j] = df;
    out.fmi[j] = (r + 2.0 / (df + 3.0)) / (r + 1.0);
  }
  return out;
}

namespace {

VectorXd mvn_draw(const VectorXd& mean, const MatrixXd& cov, Rng& rng) {
  Eigen::LLT<MatrixXd> llt(cov);
  MatrixXd root;
  if (llt.info() == Eigen::Success) {
    root = llt.matrixL();
  } else {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(cov);
    root = es.eigenvectors() *
           es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
  }
  VectorXd zdraw(mean.size());
  for (Eigen::Index i = 0; i < zdraw.size(); ++i) zdraw[i] = rnorm(rng);
  return mean + root * zdraw;
}

int draw_index(const VectorXd& weights, Rng& rng) {
  const double u = runif(rng);
  double cum = 0.0;
  for (Eigen::Index i = 0; i < weights.size(); ++i) {
    cum += weights[i];
    if (u < cum) return static_cast<int>(i);
  }
  return static_cast<int>(weights.size()) - 1;
}

}  // namespace

FitResult run_mi(const Cohort& cohort, const SamplingPlan& plan,
                 const InclusionProbabilityMap& pmap, const ImputationConfig& config,
                 Rng& rng, const FitConfig& fit_config) {
  if (plan.kind == DesignKind::Rds) {
    throw DesignNotSupportedError("multiple imputation relies on ACML and cannot be used under RDS");
  }
  config.validate();

  const Cohort phase2 = cohort.selected_subset();
  if (phase2.size() == 0) throw std::invalid_argument("run_mi: nobody selected");

  // Step 1: response model on phase-2 data with the ascertainment correction.
  FitResult response = fit_acml(phase2, pmap, fit_config);
  if (!response.converged) throw std::runtime_error("run_mi: step-1 ACML fit did not converge");

  const int n_missing = cohort.size() - phase2.size();
  if (n_missing == 0) {
    // Degenerate MI: every completed dataset is the observed data, so the
    // pooled estimate is the step-1 fit with zero between-imputation spread.
    response.fmi = VectorXd::Zero(response.estimate.size());
    response.mi_df = VectorXd::Constant(response.estimate.size(),
                                        std::numeric_limits<double>::infinity());
    return response;
  }

  // Step 2: exposure model via IPW.
  const ExposureModel exposure = fit_exposure_ipw(phase2, phase2.pi);

  // Step 3: candidate grid over the observed exposure range.
  double lo = config.grid_lo, hi = config.grid_hi;
  if (!std::isfinite(lo) || !std::isfinite(hi)) {
    lo = phase2.x.minCoeff();
    hi = phase2.x.maxCoeff();
  }
  if (!(lo < hi)) throw std::invalid_argument("run_mi: degenerate exposure grid");
  VectorXd grid(config.grid_size);
  for (int c = 0; c < config.grid_size; ++c) {
    grid[c] = lo + (hi - lo) * c / (config.grid_size - 1);
  }

  const int k = cohort.k;
  const MatrixXd W_base = [&] {
    MatrixXd W(cohort.size(), 1 + cohort.z.cols());
    W.col(0) = cohort.x;
    W.rightCols(cohort.z.cols()) = cohort.z;
    return W;
  }();
  const VectorXd unit_weights = VectorXd::Ones(cohort.size());
  const VectorXd refit_init = po_start_values(cohort.y, k, static_cast<int>(W_base.cols()));

  // Step 4: per-imputation substreams keyed off the caller's stream, so the
  // imputations are reproducible independent of execution order.
  const std::uint64_t base = rng();
  std::vector<VectorXd> estimates;
  std::vector<MatrixXd> covariances;
  std::vector<std::string> failures;

  for (int m = 0; m < config.num_imputations; ++m) {
    Rng stream = make_stream(base, 0x6D69, static_cast<std::uint64_t>(m));
    try {
      PoParams delta_m;
      bool ok = false;
      for (int attempt = 0; attempt < 100; ++attempt) {
        delta_m = PoParams::unpack(mvn_draw(response.estimate, response.cov, stream), k);
        if (delta_m.valid()) {
          ok = true;
          break;
        }
      }
      if (!ok) throw std::runtime_error("drawn response parameters never satisfied monotone cutpoints");
      ExposureModel omega_m = exposure;
      omega_m.coef = mvn_draw(exposure.coef, exposure.cov_coef, stream);

      MatrixXd W = W_base;
      for (int i = 0; i < cohort.size(); ++i) {
        if (cohort.s[i]) continue;
        const VectorXd w_c = imputation_weights(delta_m, omega_m, cohort.y[i], cohort.z.row(i), grid);
        W(i, 0) = grid[draw_index(w_c, stream)];
      }
      FitResult refit = fit_po_weighted(cohort.y, W, unit_weights, k, refit_init, fit_config);
      if (!refit.converged) throw std::runtime_error("refit did not converge");
      estimates.push_back(refit.estimate);
      covariances.push_back(refit.cov);
    } catch (const std::exception& ex) {
      failures.push_back("imputation " + std::to_string(m + 1) + ": " + ex.what());
    }
  }

  const double failure_rate = static_cast<double>(failures.size()) / config.num_imputations;
  if (failure_rate > config.max_failure_rate || estimates.size() < 2) {
    std::string detail = "run_mi: " + std::to_string(failures.size()) + "/" +
                         std::to_string(config.num_imputations) + " imputations failed";
    for (std::size_t i = 0; i < failures.size() && i < 5; ++i) detail += "; " + failures[i];
    throw std::runtime_error(detail);
  }

  // Step 5: pooling.
  FitResult pooled = rubin_pool(estimates, covariances);
  pooled.params = PoParams::unpack(pooled.estimate, k);
  pooled.param_names = response.param_names;
  return pooled;
}

}  // namespace twophase
