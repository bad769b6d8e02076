#pragma once

#include "twophase/ordinal.hpp"

namespace twophase {

struct SieveConfig {
  int df = 20;      // number of B-spline basis functions (s_n)
  int degree = 1;   // spline degree (q)
  double em_tol = 1e-6;
  int em_max_iterations = 1000;
  double h_scale = 1.0;  // profile perturbation is h_scale * N^{-1/2}
  int z1_col = 0;        // z column the sieve conditions on

  void validate() const;
};

/// Sieve representation of the conditional exposure distribution: discrete
/// support on the distinct phase-2 exposure values with B-spline-weighted
/// probability columns.
struct SieveState {
  VectorXd support;  // ascending distinct exposure values (d)
  MatrixXd p;        // d x s_n, entries >= 0, columns sum to 1
  MatrixXd basis;    // N x s_n, rows sum to 1
};

struct EmTraceRow {
  int iteration;
  double loglik;
  double max_param_change;
};

struct EmFit {
  FitResult fit;
  SieveState state;
  std::vector<EmTraceRow> trace;
};

/// B-spline basis of the given degree with boundary knots at min/max and
/// interior knots at empirical quantiles; rows sum to 1 on [min, max].
/// Ties at a knot fall toward the lower basis function, matching the
/// quantile binning used elsewhere.
MatrixXd bspline_basis(const VectorXd& z1, int df, int degree);

/// Sieve maximum likelihood via EM: alternates closed-form updates of the
/// exposure masses with weighted PO refits of theta, monitoring the
/// observed-data log-likelihood.
EmFit em_fit(const Cohort& cohort, const SieveConfig& config,
             const FitConfig& newton_config = {});

/// Covariance of theta-hat from the profile log-likelihood: a second-order
/// finite-difference Hessian with perturbation h_scale * N^{-1/2}, each
/// evaluation re-running the EM over the masses with theta held fixed
/// (warm-started at the fitted state).
MatrixXd profile_covariance(const PoParams& theta_hat, const SieveState& state,
                            const Cohort& cohort, const SieveConfig& config);

/// E-step quantities for the unselected subjects at (theta, p): posterior
/// support weights q (rows follow `rows`) and their normalizing masses.
struct EStepResult {
  std::vector<int> rows;  // cohort indices of the unselected subjects
  MatrixXd q;             // one row per unselected subject, d columns
  VectorXd denom;
};
EStepResult smle_estep(const PoParams& theta, const SieveState& state, const Cohort& cohort);

/// Full posterior table psi over (support value, basis index) for one
/// unselected subject; rows sum to the subject's q row.
MatrixXd smle_estep_psi(const PoParams& theta, const SieveState& state,
                        const Cohort& cohort, int subject);

}  // namespace twophase
