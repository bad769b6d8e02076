#pragma once

#include "twophase/designs.hpp"
#include "twophase/ordinal.hpp"

namespace twophase {

/// Design inclusion probabilities pi(j, g) for the ascertainment correction.
/// Rows index outcome levels 1..k, columns covariate groups 1..t; NaN marks
/// an undefined cell.
struct InclusionProbabilityMap {
  MatrixXd pi;  // k x t

  int levels() const { return static_cast<int>(pi.rows()); }
  int groups() const { return static_cast<int>(pi.cols()); }

  /// pi for (outcome level j, group g), 1-based. Errors when undefined.
  double at(int j, int g) const;

  /// The length-k probability column for group g; errors if any level is
  /// undefined.
  VectorXd level_probabilities(int g) const;

  static InclusionProbabilityMap constant(int k, double pi_value);
  static InclusionProbabilityMap from_plan(const Cohort& cohort, const SamplingPlan& plan);
};

/// Ascertainment-correction mass sum_j pi(j,g) P(Y=j | x, z). Lies in (0,1]
/// for valid inputs.
double ac_term(const PoParams& params, double x, const Eigen::Ref<const VectorXd>& z,
               const InclusionProbabilityMap& pmap, int g);

/// Ascertainment-corrected ML on phase-2 complete cases. Every subject must
/// carry x and a stratum with a fully defined pmap column.
FitResult fit_acml(const Cohort& phase2, const InclusionProbabilityMap& pmap,
                   const FitConfig& config = {});

}  // namespace twophase
