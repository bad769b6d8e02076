#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "twophase/common.hpp"

namespace twophase {

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// Proportional-odds parameters: cutpoint intercepts on the log-odds scale
/// plus slopes (exposure first when present, then the cheap covariates).
struct PoParams {
  VectorXd alphas;  // size k-1, strictly increasing
  VectorXd beta;

  int n_levels() const { return static_cast<int>(alphas.size()) + 1; }
  int dim() const { return static_cast<int>(alphas.size() + beta.size()); }

  bool valid() const;

  /// Flattens to (alpha_1..alpha_{k-1}, beta_1..beta_p).
  VectorXd pack() const;
  static PoParams unpack(const VectorXd& v, int k);
};

/// Per-subject study records. `x` is NaN where the expensive exposure is
/// unmeasured; `pi` is NaN where no inclusion probability is defined and
/// `stratum` holds the covariate group used by stratified designs (1-based,
/// 0 where not assigned).
struct Cohort {
  std::vector<std::int64_t> id;
  VectorXi y;   // outcome level in 1..k
  VectorXd x;   // expensive exposure, NaN = missing
  MatrixXd z;   // inexpensive covariates, one row per subject
  Eigen::Array<bool, Eigen::Dynamic, 1> s;  // phase-2 selection flag
  VectorXd pi;
  VectorXi stratum;
  int k = 0;

  int size() const { return static_cast<int>(y.size()); }
  int n_selected() const { return static_cast<int>(s.count()); }

  /// Checks the structural invariants (y range, x present where s, pi range).
  /// Throws std::invalid_argument on violation.
  void validate() const;

  /// Rows with s = true (the phase-2 subsample).
  Cohort selected_subset() const;
};

/// Builds a cohort from raw columns, filling ids 1..N, s = true everywhere
/// and no pi/stratum. Used for fully observed data.
Cohort make_full_cohort(int k, const VectorXi& y, const VectorXd& x, const MatrixXd& z);

struct FitConfig {
  double param_tol = 1e-8;
  double score_tol = 1e-8;
  int max_iterations = 100;
  int max_halvings = 30;
};

struct FitResult {
  PoParams params;
  VectorXd estimate;  // packed copy of params (plus any extensions)
  MatrixXd cov;
  bool converged = false;
  int iterations = 0;
  double loglik = 0.0;
  VectorXd fmi;    // per-parameter fraction of missing information (MI only)
  VectorXd mi_df;  // per-parameter small-M degrees of freedom (MI only)
  std::vector<std::string> param_names;
};

/// Canonical parameter names for a PO fit: alpha1.. then a caller-chosen
/// label per slope column.
std::vector<std::string> po_param_names(int k, const std::vector<std::string>& slope_names);

// ---------------------------------------------------------------------------
// Model evaluation
// ---------------------------------------------------------------------------

/// PMF over the k outcome levels at covariates (x, z). Entries are the
/// successive differences of expit(alpha_j + beta_x x + beta_z'z).
VectorXd cell_probabilities(const PoParams& params, double x,
                            const Eigen::Ref<const VectorXd>& z);

/// Sum of log cell probabilities at the observed outcomes. Requires every
/// record to carry x; returns -inf if some observed cell has probability 0.
double log_likelihood(const PoParams& params, const Cohort& data);

/// Analytic gradient of log_likelihood with respect to (alphas, beta).
VectorXd score(const PoParams& params, const Cohort& data);

/// Maximum likelihood PO fit by Newton-Raphson with step-halving. Covariance
/// is the inverse observed information at the optimum.
FitResult fit_ml(const Cohort& data, const FitConfig& config = {});

// ---------------------------------------------------------------------------
// Shared fitting machinery (used by ACML, MI refits and the SMLE M-step)
// ---------------------------------------------------------------------------

/// Value/gradient/Hessian bundle of an objective to be maximized.
struct ObjectiveEval {
  double value = 0.0;
  VectorXd gradient;
  MatrixXd hessian;
};

/// Objective callback: evaluates at packed parameters; when need_derivatives
/// is false only `value` has to be filled in.
using Objective = std::function<ObjectiveEval(const VectorXd&, bool need_derivatives)>;

/// Newton-Raphson with step-halving. Steps that leave the alpha block
/// non-monotone or produce a non-finite objective are halved (up to
/// config.max_halvings); failure to improve ends the iteration.
FitResult newton_maximize(const Objective& objective, const VectorXd& init, int k,
                          const FitConfig& config);

/// Log-likelihood contributions of weighted PO data: rows (y_i, w_i, weight_i)
/// where W holds one covariate row per observation.
ObjectiveEval po_weighted_eval(const VectorXd& packed, int k, const VectorXi& y,
                               const MatrixXd& W, const VectorXd& weights,
                               bool need_derivatives);

/// Weighted PO fit over flat observation rows.
FitResult fit_po_weighted(const VectorXi& y, const MatrixXd& W, const VectorXd& weights,
                          int k, const VectorXd& init, const FitConfig& config);

/// Starting values: alphas at logits of the (weighted) empirical cumulative
/// outcome frequencies, slopes at zero.
VectorXd po_start_values(const VectorXi& y, int k, int n_slopes,
                         const VectorXd* weights = nullptr);

/// Design matrix [x, z] for complete records, exposure in column 0.
MatrixXd design_matrix_xz(const Cohort& data);

}  // namespace twophase
