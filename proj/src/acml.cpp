#include "twophase/acml.hpp"

#include <cmath>
#include <limits>

namespace twophase {

double InclusionProbabilityMap::at(int j, int g) const {
  if (j < 1 || j > levels() || g < 1 || g > groups()) {
    throw std::invalid_argument("inclusion probability requested outside the map");
  }
  const double p = pi(j - 1, g - 1);
  if (!std::isfinite(p)) {
    throw std::invalid_argument("inclusion probability undefined for (y=" + std::to_string(j) +
                                ", g=" + std::to_string(g) + ")");
  }
  return p;
}

VectorXd InclusionProbabilityMap::level_probabilities(int g) const {
  VectorXd out(levels());
  for (int j = 1; j <= levels(); ++j) out[j - 1] = at(j, g);
  return out;
}

InclusionProbabilityMap InclusionProbabilityMap::constant(int k, double pi_value) {
  InclusionProbabilityMap m;
  m.pi = MatrixXd::Constant(k, 1, pi_value);
  return m;
}

InclusionProbabilityMap InclusionProbabilityMap::from_plan(const Cohort& cohort,
                                                           const SamplingPlan& plan) {
  InclusionProbabilityMap m;
  m.pi = inclusion_probabilities(cohort, plan);
  return m;
}

double ac_term(const PoParams& params, double x, const Eigen::Ref<const VectorXd>& z,
               const InclusionProbabilityMap& pmap, int g) {
  const VectorXd level_pi = pmap.level_probabilities(g);
  if (level_pi.size() != params.n_levels()) {
    throw std::invalid_argument("ac_term: map levels do not match the model");
  }
  return level_pi.dot(cell_probabilities(params, x, z));
}

namespace {

/// Corrected log-likelihood sum_i [log P(y_i|x_i,z_i) - log AC_i] with
/// analytic derivatives. AC_i = sum_j pi(j, g_i) P_theta(j | x_i, z_i).
ObjectiveEval acml_eval(const VectorXd& packed, const Cohort& data, const MatrixXd& W,
                        const InclusionProbabilityMap& pmap, bool need_derivatives) {
  const int k = data.k;
  const int n = data.size();
  const int p = static_cast<int>(W.cols());
  const int dim = (k - 1) + p;

  ObjectiveEval out = po_weighted_eval(packed, k, data.y, W, VectorXd::Ones(n), need_derivatives);
  if (!std::isfinite(out.value)) return out;

  const VectorXd eta = W * packed.tail(p);
  VectorXd gamma(k - 1), gcur(k - 1), hcur(k - 1), kappa(k - 1), lambda(k - 1);
  VectorXd dac(dim);
  VectorXd c2;
  if (need_derivatives) c2 = VectorXd::Zero(n);

  for (int i = 0; i < n; ++i) {
    const VectorXd level_pi = pmap.level_probabilities(data.stratum[i]);
    double ac = 0.0;
    double prev = 0.0;
    for (int j = 0; j < k - 1; ++j) {
      gamma[j] = expit(packed[j] + eta[i]);
      ac += level_pi[j] * (gamma[j] - prev);
      prev = gamma[j];
    }
    ac += level_pi[k - 1] * (1.0 - prev);
    if (!(ac > 0.0)) {
      out.value = -std::numeric_limits<double>::infinity();
      return out;
    }
    out.value -= std::log(ac);
    if (!need_derivatives) continue;

    // d AC = sum_a kappa_a u_a with u_a = e_a (+) w and
    // kappa_a = g_a (pi_a - pi_{a+1}); the beta part telescopes.
    double kappa_sum = 0.0, lambda_sum = 0.0;
    for (int a = 0; a < k - 1; ++a) {
      gcur[a] = gamma[a] * (1.0 - gamma[a]);
      hcur[a] = gcur[a] * (1.0 - 2.0 * gamma[a]);
      const double dpi = level_pi[a] - level_pi[a + 1];
      kappa[a] = gcur[a] * dpi;
      lambda[a] = hcur[a] * dpi;
      kappa_sum += kappa[a];
      lambda_sum += lambda[a];
    }

    dac.head(k - 1) = kappa;
    dac.tail(p) = kappa_sum * W.row(i).transpose();

    // grad -= dAC / AC
    out.gradient -= dac / ac;

    // hess -= d2AC/AC - (dAC)(dAC)'/AC^2, with d2AC = sum_a lambda_a u_a u_a'
    // and u_a = e_a (+) w. The base evaluation already mirrored its Hessian,
    // so the correction is applied symmetrically here.
    const double inv_ac = 1.0 / ac;
    const double inv_ac2 = inv_ac * inv_ac;
    for (int a = 0; a < k - 1; ++a) {
      out.hessian(a, a) += -lambda[a] * inv_ac + kappa[a] * kappa[a] * inv_ac2;
      for (int b = 0; b < a; ++b) {
        const double v = kappa[a] * kappa[b] * inv_ac2;
        out.hessian(a, b) += v;
        out.hessian(b, a) += v;
      }
      const double strip = -lambda[a] * inv_ac + kappa[a] * kappa_sum * inv_ac2;
      out.hessian.row(a).tail(p) += strip * W.row(i);
      out.hessian.col(a).tail(p) += strip * W.row(i).transpose();
    }
    c2[i] = -lambda_sum * inv_ac + kappa_sum * kappa_sum * inv_ac2;
  }

  if (need_derivatives) {
    out.hessian.bottomRightCorner(p, p) += W.transpose() * c2.asDiagonal() * W;
  }
  return out;
}

}  // namespace

FitResult fit_acml(const Cohort& phase2, const InclusionProbabilityMap& pmap,
                   const FitConfig& config) {
  const int n = phase2.size();
  if (n == 0) throw std::invalid_argument("fit_acml: empty phase-2 data");
  if (pmap.levels() != phase2.k) throw std::invalid_argument("fit_acml: map levels != k");
  for (int i = 0; i < n; ++i) {
    if (!std::isfinite(phase2.x[i])) {
      throw std::invalid_argument("fit_acml: x missing in phase-2 data");
    }
    if (phase2.stratum[i] < 1 || phase2.stratum[i] > pmap.groups()) {
      throw std::invalid_argument("fit_acml: subject stratum outside the probability map");
    }
  }
  // Force the full column lookup once so undefined cells fail fast.
  for (int i = 0; i < n; ++i) pmap.level_probabilities(phase2.stratum[i]);

  const MatrixXd W = design_matrix_xz(phase2);
  const VectorXd init = po_start_values(phase2.y, phase2.k, static_cast<int>(W.cols()));
  Objective obj = [&](const VectorXd& v, bool derivs) {
    return acml_eval(v, phase2, W, pmap, derivs);
  };
  FitResult fit = newton_maximize(obj, init, phase2.k, config);
  std::vector<std::string> slopes{"beta_x"};
  for (int j = 1; j <= phase2.z.cols(); ++j) slopes.push_back("beta_z" + std::to_string(j));
  fit.param_names = po_param_names(phase2.k, slopes);
  return fit;
}

}  // namespace twophase
