#include "twophase/designs.hpp"

#include "twophase/residuals.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace twophase {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}

std::string design_kind_name(DesignKind kind) {
  switch (kind) {
    case DesignKind::Srs: return "srs";
    case DesignKind::Ods: return "ods";
    case DesignKind::Csods: return "csods";
    case DesignKind::Rds: return "rds";
  }
  return "?";
}

DesignKind design_kind_from_name(const std::string& name) {
  if (name == "srs") return DesignKind::Srs;
  if (name == "ods") return DesignKind::Ods;
  if (name == "csods") return DesignKind::Csods;
  if (name == "rds") return DesignKind::Rds;
  throw std::invalid_argument("unknown design kind: " + name);
}

int Stratifier::assign(double value) const {
  // ties at a boundary go to the lower group
  for (int g = 0; g < boundaries.size(); ++g) {
    if (value <= boundaries[g]) return g + 1;
  }
  return groups();
}

Stratifier quartile_stratifier(const VectorXd& values, int t) {
  if (t < 2) throw std::invalid_argument("quartile_stratifier: t must be at least 2");
  if (values.size() < t) throw std::invalid_argument("quartile_stratifier: too few values");
  std::vector<double> sorted(values.data(), values.data() + values.size());
  std::sort(sorted.begin(), sorted.end());
  if (sorted.front() == sorted.back()) {
    throw std::invalid_argument("quartile_stratifier: values are constant");
  }
  Stratifier s;
  s.boundaries.resize(t - 1);
  for (int i = 1; i < t; ++i) {
    s.boundaries[i - 1] = empirical_quantile(sorted, static_cast<double>(i) / t);
  }
  return s;
}

void SamplingPlan::validate(int k) const {
  switch (kind) {
    case DesignKind::Srs:
      if (!(srs_pi > 0.0 && srs_pi <= 1.0)) {
        throw std::invalid_argument("srs: pi must lie in (0,1]");
      }
      break;
    case DesignKind::Ods:
      if (ods_targets.size() != k) throw std::invalid_argument("ods: need one target per level");
      if ((ods_targets.array() < 0).any()) throw std::invalid_argument("ods: negative target");
      break;
    case DesignKind::Csods:
      if (csods_targets.rows() != k || csods_targets.cols() < 2) {
        throw std::invalid_argument("csods: targets must be k x t with t >= 2");
      }
      if ((csods_targets.array() < 0).any()) throw std::invalid_argument("csods: negative target");
      break;
    case DesignKind::Rds:
      if (rds.prealloc_per_level < 0 || rds.tail_low < 0 || rds.tail_high < 0) {
        throw std::invalid_argument("rds: negative allocation");
      }
      if (rds.working_z_cols.empty()) {
        throw std::invalid_argument("rds: working model needs at least one covariate");
      }
      break;
  }
}

VectorXi plan_strata(const Cohort& cohort, const SamplingPlan& plan) {
  if (plan.kind != DesignKind::Csods) return VectorXi::Ones(cohort.size());
  const Stratifier strat =
      quartile_stratifier(cohort.z.col(plan.csods_z1_col), static_cast<int>(plan.csods_targets.cols()));
  VectorXi g(cohort.size());
  for (int i = 0; i < cohort.size(); ++i) g[i] = strat.assign(cohort.z(i, plan.csods_z1_col));
  return g;
}

MatrixXd inclusion_probabilities(const Cohort& cohort, const SamplingPlan& plan) {
  const int k = cohort.k;
  plan.validate(k);
  if (plan.kind == DesignKind::Rds) {
    throw DesignNotSupportedError("residual-dependent sampling has no closed-form inclusion probabilities");
  }
  if (plan.kind == DesignKind::Srs) {
    return MatrixXd::Constant(k, 1, plan.srs_pi);
  }

  const VectorXi strata = plan_strata(cohort, plan);
  const int t = plan.kind == DesignKind::Ods ? 1 : static_cast<int>(plan.csods_targets.cols());
  MatrixXi counts = MatrixXi::Zero(k, t);
  for (int i = 0; i < cohort.size(); ++i) {
    counts(cohort.y[i] - 1, strata[i] - 1) += 1;
  }
  MatrixXd pi(k, t);
  for (int j = 0; j < k; ++j) {
    for (int g = 0; g < t; ++g) {
      const int target = plan.kind == DesignKind::Ods ? plan.ods_targets[j] : plan.csods_targets(j, g);
      if (counts(j, g) <= target) {
        pi(j, g) = 1.0;  // clamp: take everyone present (vacuous for empty cells)
      } else {
        pi(j, g) = static_cast<double>(target) / counts(j, g);
      }
    }
  }
  return pi;
}

namespace {

SelectionResult bernoulli_within_cells(const Cohort& cohort, const VectorXi& strata,
                                       const MatrixXd& pi_cells, Rng& rng) {
  const int n = cohort.size();
  SelectionResult out;
  out.selected.resize(n);
  out.pi.resize(n);
  out.stratum = strata;
  for (int i = 0; i < n; ++i) {
    const double p = pi_cells(cohort.y[i] - 1, strata[i] - 1);
    out.pi[i] = p;
    out.selected[i] = runif(rng) < p;
  }
  if (out.n_selected() == 0) {
    throw std::runtime_error("sampling selected nobody; inclusion probabilities too small");
  }
  return out;
}

void warn_clamped_cells(const MatrixXi& targets, const MatrixXd& pi, const Cohort& cohort,
                        const VectorXi& strata, SelectionResult& out) {
  const int k = static_cast<int>(pi.rows());
  const int t = static_cast<int>(pi.cols());
  MatrixXi counts = MatrixXi::Zero(k, t);
  for (int i = 0; i < cohort.size(); ++i) counts(cohort.y[i] - 1, strata[i] - 1) += 1;
  for (int j = 0; j < k; ++j) {
    for (int g = 0; g < t; ++g) {
      if (counts(j, g) == 0 && targets(j, g) > 0) {
        out.warnings.push_back("cell (y=" + std::to_string(j + 1) + ", g=" + std::to_string(g + 1) +
                               ") is empty; target skipped");
      } else if (counts(j, g) > 0 && targets(j, g) > counts(j, g)) {
        out.warnings.push_back("cell (y=" + std::to_string(j + 1) + ", g=" + std::to_string(g + 1) +
                               ") target exceeds count; taking all with pi=1");
      }
    }
  }
}

}  // namespace

SelectionResult sample_srs(const Cohort& cohort, double pi, Rng& rng) {
  if (!(pi > 0.0 && pi <= 1.0)) throw std::invalid_argument("sample_srs: pi must lie in (0,1]");
  const MatrixXd cells = MatrixXd::Constant(cohort.k, 1, pi);
  return bernoulli_within_cells(cohort, VectorXi::Ones(cohort.size()), cells, rng);
}

SelectionResult sample_ods(const Cohort& cohort, const VectorXi& targets, Rng& rng) {
  SamplingPlan plan;
  plan.kind = DesignKind::Ods;
  plan.ods_targets = targets;
  const MatrixXd pi = inclusion_probabilities(cohort, plan);
  const VectorXi strata = VectorXi::Ones(cohort.size());
  SelectionResult out = bernoulli_within_cells(cohort, strata, pi, rng);
  warn_clamped_cells(targets, pi, cohort, strata, out);
  return out;
}

SelectionResult sample_csods(const Cohort& cohort, const Stratifier& stratifier,
                             const MatrixXi& targets, int z1_col, Rng& rng) {
  if (targets.rows() != cohort.k || targets.cols() != stratifier.groups()) {
    throw std::invalid_argument("sample_csods: target matrix must be k x t");
  }
  const int n = cohort.size();
  VectorXi strata(n);
  for (int i = 0; i < n; ++i) strata[i] = stratifier.assign(cohort.z(i, z1_col));

  MatrixXi counts = MatrixXi::Zero(cohort.k, stratifier.groups());
  for (int i = 0; i < n; ++i) counts(cohort.y[i] - 1, strata[i] - 1) += 1;
  MatrixXd pi(cohort.k, stratifier.groups());
  for (int j = 0; j < cohort.k; ++j) {
    for (int g = 0; g < stratifier.groups(); ++g) {
      pi(j, g) = counts(j, g) <= targets(j, g) ? 1.0
                                               : static_cast<double>(targets(j, g)) / counts(j, g);
    }
  }
  SelectionResult out = bernoulli_within_cells(cohort, strata, pi, rng);
  warn_clamped_cells(targets, pi, cohort, strata, out);
  return out;
}

SelectionResult sample_rds(const Cohort& cohort, const RdsSpec& spec, Rng& rng,
                           const FitConfig& working_config) {
  const int n = cohort.size();
  const long planned = static_cast<long>(spec.prealloc_per_level) * cohort.k + spec.tail_low + spec.tail_high;
  if (planned > n) throw std::invalid_argument("sample_rds: allocations exceed the cohort size");

  FitResult working = fit_working_model(cohort, spec.working_z_cols, working_config);
  if (!working.converged) {
    throw std::runtime_error("sample_rds: phase-1 working model did not converge");
  }
  const VectorXd residuals = psr_all(working, cohort, spec.working_z_cols);

  // One uniform per subject, consumed in index order: used both for the
  // per-level pre-allocation and for breaking residual ties at the cutoffs.
  VectorXd key(n);
  for (int i = 0; i < n; ++i) key[i] = runif(rng);

  SelectionResult out;
  out.selected = Eigen::Array<bool, Eigen::Dynamic, 1>::Constant(n, false);
  out.pi = VectorXd::Constant(n, kNaN);
  out.stratum = VectorXi::Ones(n);
  out.pi_defined = false;

  // Pre-allocation: simple random sample without replacement per outcome level.
  for (int level = 1; level <= cohort.k; ++level) {
    std::vector<int> members;
    for (int i = 0; i < n; ++i) {
      if (cohort.y[i] == level) members.push_back(i);
    }
    std::sort(members.begin(), members.end(),
              [&](int a, int b) { return key[a] < key[b]; });
    const int take = std::min<int>(spec.prealloc_per_level, static_cast<int>(members.size()));
    if (take < spec.prealloc_per_level) {
      out.warnings.push_back("level " + std::to_string(level) +
                             " has fewer subjects than the pre-allocation; taking all");
    }
    for (int m = 0; m < take; ++m) out.selected[members[m]] = true;
  }

  // Tails among the remainder, ordered by PSR with the random key as
  // tie-breaker so cutoff ties resolve uniformly.
  std::vector<int> remainder;
  for (int i = 0; i < n; ++i) {
    if (!out.selected[i]) remainder.push_back(i);
  }
  std::sort(remainder.begin(), remainder.end(), [&](int a, int b) {
    if (residuals[a] != residuals[b]) return residuals[a] < residuals[b];
    return key[a] < key[b];
  });
  const int n_rem = static_cast<int>(remainder.size());
  const int take_low = std::min(spec.tail_low, n_rem);
  for (int m = 0; m < take_low; ++m) out.selected[remainder[m]] = true;
  const int take_high = std::min(spec.tail_high, n_rem - take_low);
  for (int m = 0; m < take_high; ++m) out.selected[remainder[n_rem - 1 - m]] = true;
  if (take_low < spec.tail_low || take_high < spec.tail_high) {
    out.warnings.push_back("remainder smaller than the requested tails; taking all");
  }

  if (out.n_selected() == 0) throw std::runtime_error("sample_rds selected nobody");
  return out;
}

SelectionResult apply_plan(const Cohort& cohort, const SamplingPlan& plan, Rng& rng) {
  plan.validate(cohort.k);
  switch (plan.kind) {
    case DesignKind::Srs:
      return sample_srs(cohort, plan.srs_pi, rng);
    case DesignKind::Ods:
      return sample_ods(cohort, plan.ods_targets, rng);
    case DesignKind::Csods: {
      const Stratifier strat = quartile_stratifier(cohort.z.col(plan.csods_z1_col),
                                                   static_cast<int>(plan.csods_targets.cols()));
      return sample_csods(cohort, strat, plan.csods_targets, plan.csods_z1_col, rng);
    }
    case DesignKind::Rds:
      return sample_rds(cohort, plan.rds, rng);
  }
  throw std::logic_error("apply_plan: unreachable");
}

Cohort mask_by_selection(const Cohort& cohort, const SelectionResult& sel) {
  if (sel.selected.size() != cohort.size()) {
    throw std::invalid_argument("mask_by_selection: selection and cohort sizes disagree");
  }
  Cohort out = cohort;
  out.s = sel.selected;
  out.pi = sel.pi;
  out.stratum = sel.stratum;
  for (int i = 0; i < out.size(); ++i) {
    if (!out.s[i]) out.x[i] = kNaN;
  }
  return out;
}

}  // namespace twophase
