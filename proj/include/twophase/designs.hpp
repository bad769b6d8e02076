#pragma once

#include "twophase/ordinal.hpp"

namespace twophase {

enum class DesignKind { Srs, Ods, Csods, Rds };

std::string design_kind_name(DesignKind kind);
DesignKind design_kind_from_name(const std::string& name);

/// Discretizer mapping a continuous value to one of t ordered groups.
/// Boundaries sit at the empirical i/t quantiles; values tied with a
/// boundary fall in the lower group.
struct Stratifier {
  VectorXd boundaries;  // size t-1, nondecreasing

  int groups() const { return static_cast<int>(boundaries.size()) + 1; }
  int assign(double value) const;
};

/// Boundaries from the empirical quantiles of `values`. Errors on constant
/// input or t < 2.
Stratifier quartile_stratifier(const VectorXd& values, int t);

struct RdsSpec {
  int prealloc_per_level = 0;
  int tail_low = 0;
  int tail_high = 0;
  std::vector<int> working_z_cols;  // covariates of the phase-1 working model
};

struct SamplingPlan {
  DesignKind kind = DesignKind::Srs;
  double srs_pi = 0.0;          // SRS
  VectorXi ods_targets;         // ODS: expected counts per outcome level (k)
  MatrixXi csods_targets;       // CSODS: expected counts, k rows x t columns
  int csods_z1_col = 0;         // column of z the CSODS stratifier discretizes
  RdsSpec rds;

  void validate(int k) const;
};

/// Outcome of applying a plan to a cohort. `pi` is the per-subject inclusion
/// probability (NaN everywhere when the design admits none, as under RDS)
/// and `stratum` the covariate group used (1 when the design has none).
struct SelectionResult {
  Eigen::Array<bool, Eigen::Dynamic, 1> selected;
  VectorXd pi;
  VectorXi stratum;
  bool pi_defined = true;
  std::vector<std::string> warnings;

  int n_selected() const { return static_cast<int>(selected.count()); }
};

/// Design inclusion probabilities pi(j, g) implied by a plan and the
/// cohort's phase-1 stratum counts, clamped to 1 where targets meet or
/// exceed the counts. Rows index outcome levels, columns covariate groups.
/// Throws DesignNotSupportedError for RDS plans.
MatrixXd inclusion_probabilities(const Cohort& cohort, const SamplingPlan& plan);

/// Covariate group of every subject under a plan (all 1 unless CSODS).
VectorXi plan_strata(const Cohort& cohort, const SamplingPlan& plan);

SelectionResult sample_srs(const Cohort& cohort, double pi, Rng& rng);
SelectionResult sample_ods(const Cohort& cohort, const VectorXi& targets, Rng& rng);
SelectionResult sample_csods(const Cohort& cohort, const Stratifier& stratifier,
                             const MatrixXi& targets, int z1_col, Rng& rng);
SelectionResult sample_rds(const Cohort& cohort, const RdsSpec& spec, Rng& rng,
                           const FitConfig& working_config = {});

/// Applies any plan, deriving the stratifier for CSODS from the cohort.
SelectionResult apply_plan(const Cohort& cohort, const SamplingPlan& plan, Rng& rng);

/// Copies the cohort, masking x to NaN wherever the selection excludes the
/// subject and recording the selection flags, probabilities and strata.
Cohort mask_by_selection(const Cohort& cohort, const SelectionResult& sel);

}  // namespace twophase
