#pragma once

#include "twophase/ordinal.hpp"

namespace twophase {

/// Fitted outcome distribution for one subject.
struct FittedDistribution {
  VectorXd probs;  // length k, entries in [0,1], sums to 1

  void validate() const;
};

/// Probability-scale residual P(Y* < y) - P(Y* > y) under the fitted
/// distribution; lies in [-1, 1] and has mean zero under its own fit.
double psr(int y, const FittedDistribution& fstar);

/// Fits the phase-1 working PO model of Y on the given z columns (no
/// exposure). Used by residual-dependent sampling.
FitResult fit_working_model(const Cohort& data, const std::vector<int>& z_cols,
                            const FitConfig& config = {});

/// Per-subject PSRs under a working fit on the z columns only. The fit's
/// slope dimension must match z_cols; mismatch is an error.
VectorXd psr_all(const FitResult& fit, const Cohort& data, const std::vector<int>& z_cols);

}  // namespace twophase
