#pragma once

#include <limits>

#include "twophase/acml.hpp"
#include "twophase/designs.hpp"
#include "twophase/ordinal.hpp"

namespace twophase {

/// Linear-normal exposure model X | Z: coefficients (intercept first, then
/// one per z column), homoscedastic residual scale, and a design-based
/// sandwich covariance for the coefficients.
struct ExposureModel {
  VectorXd coef;
  double sigma = 0.0;  // residual scale, > 0
  MatrixXd cov_coef;

  double mean_at(const Eigen::Ref<const VectorXd>& z) const;
};

struct ImputationConfig {
  int grid_size = 100;      // C
  int num_imputations = 100;  // M
  double grid_lo = std::numeric_limits<double>::quiet_NaN();  // NaN: use the
  double grid_hi = std::numeric_limits<double>::quiet_NaN();  // observed range
  double max_failure_rate = 0.10;

  void validate() const;
};

/// Inverse-probability-weighted least squares of X on [1, Z] over phase-2
/// records, weights 1/pi. Coefficient covariance by the sandwich form.
ExposureModel fit_exposure_ipw(const Cohort& phase2, const VectorXd& pi);

/// Posterior weights over the candidate grid for one subject:
/// w_c proportional to P(y | x_c, z; delta) * density(x_c | z; omega),
/// normalized to sum to one.
VectorXd imputation_weights(const PoParams& delta, const ExposureModel& omega, int y,
                            const Eigen::Ref<const VectorXd>& z, const VectorXd& grid);

/// Rubin pooling of M point estimates and covariance matrices: pooled mean,
/// total variance within + (1 + 1/M) between, small-M degrees of freedom and
/// per-parameter fraction of missing information.
FitResult rubin_pool(const std::vector<VectorXd>& estimates, const std::vector<MatrixXd>& covs);

/// Full multiple-imputation estimator: ACML response fit, IPW exposure fit,
/// grid imputation of the unmeasured exposure and Rubin pooling of plain ML
/// refits. Refuses RDS plans.
FitResult run_mi(const Cohort& cohort, const SamplingPlan& plan,
                 const InclusionProbabilityMap& pmap, const ImputationConfig& config,
                 Rng& rng, const FitConfig& fit_config = {});

}  // namespace twophase
