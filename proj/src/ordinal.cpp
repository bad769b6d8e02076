#include "twophase/ordinal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace twophase {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

bool alphas_increasing(const Eigen::Ref<const VectorXd>& a) {
  for (Eigen::Index j = 0; j + 1 < a.size(); ++j) {
    if (!(a[j] < a[j + 1])) return false;
  }
  return a.allFinite();
}
}  // namespace

bool PoParams::valid() const {
  return alphas.size() >= 1 && alphas_increasing(alphas) && beta.allFinite();
}

VectorXd PoParams::pack() const {
  VectorXd v(dim());
  v.head(alphas.size()) = alphas;
  v.tail(beta.size()) = beta;
  return v;
}

PoParams PoParams::unpack(const VectorXd& v, int k) {
  PoParams p;
  p.alphas = v.head(k - 1);
  p.beta = v.tail(v.size() - (k - 1));
  return p;
}

void Cohort::validate() const {
  const int n = size();
  if (k < 2) throw std::invalid_argument("cohort: k must be at least 2");
  if (x.size() != n || z.rows() != n || s.size() != n || pi.size() != n ||
      stratum.size() != n || static_cast<int>(id.size()) != n) {
    throw std::invalid_argument("cohort: column lengths disagree");
  }
  for (int i = 0; i < n; ++i) {
    if (y[i] < 1 || y[i] > k) throw std::invalid_argument("cohort: y outside 1..k");
    if (s[i] && !std::isfinite(x[i])) {
      throw std::invalid_argument("cohort: x missing for a selected subject");
    }
    if (std::isfinite(pi[i]) && (pi[i] <= 0.0 || pi[i] > 1.0)) {
      throw std::invalid_argument("cohort: pi outside (0,1]");
    }
  }
}

Cohort Cohort::selected_subset() const {
  Cohort out;
  out.k = k;
  const int m = n_selected();
  out.id.resize(m);
  out.y.resize(m);
  out.x.resize(m);
  out.z.resize(m, z.cols());
  out.s.resize(m);
  out.pi.resize(m);
  out.stratum.resize(m);
  int r = 0;
  for (int i = 0; i < size(); ++i) {
    if (!s[i]) continue;
    out.id[r] = id[i];
    out.y[r] = y[i];
    out.x[r] = x[i];
    out.z.row(r) = z.row(i);
    out.s[r] = true;
    out.pi[r] = pi[i];
    out.stratum[r] = stratum[i];
    ++r;
  }
  return out;
}

Cohort make_full_cohort(int k, const VectorXi& y, const VectorXd& x, const MatrixXd& z) {
  Cohort c;
  c.k = k;
  const int n = static_cast<int>(y.size());
  c.y = y;
  c.x = x;
  c.z = z;
  c.id.resize(n);
  for (int i = 0; i < n; ++i) c.id[i] = i + 1;
  c.s = Eigen::Array<bool, Eigen::Dynamic, 1>::Constant(n, true);
  c.pi = VectorXd::Constant(n, std::numeric_limits<double>::quiet_NaN());
  c.stratum = VectorXi::Ones(n);
  return c;
}

std::vector<std::string> po_param_names(int k, const std::vector<std::string>& slope_names) {
  std::vector<std::string> names;
  for (int j = 1; j < k; ++j) names.push_back("alpha" + std::to_string(j));
  names.insert(names.end(), slope_names.begin(), slope_names.end());
  return names;
}

VectorXd cell_probabilities(const PoParams& params, double x,
                            const Eigen::Ref<const VectorXd>& z) {
  if (!params.valid()) {
    throw std::invalid_argument("cell_probabilities: alphas must be finite and strictly increasing");
  }
  const int k = params.n_levels();
  double eta = 0.0;
  if (params.beta.size() > 0) {
    eta = params.beta[0] * x;
    if (params.beta.size() > 1) {
      eta += params.beta.tail(params.beta.size() - 1).dot(z);
    }
  }
  VectorXd probs(k);
  double prev = 0.0;
  for (int j = 0; j < k - 1; ++j) {
    const double cum = expit(params.alphas[j] + eta);
    probs[j] = cum - prev;
    prev = cum;
  }
  probs[k - 1] = 1.0 - prev;
  return probs;
}

MatrixXd design_matrix_xz(const Cohort& data) {
  MatrixXd W(data.size(), 1 + data.z.cols());
  W.col(0) = data.x;
  W.rightCols(data.z.cols()) = data.z;
  return W;
}

namespace {

VectorXd require_complete_x(const Cohort& data) {
  for (int i = 0; i < data.size(); ++i) {
    if (!std::isfinite(data.x[i])) {
      throw std::invalid_argument("operation requires complete records (x missing at row " +
                                  std::to_string(i) + ")");
    }
  }
  return data.x;
}

}  // namespace

double log_likelihood(const PoParams& params, const Cohort& data) {
  require_complete_x(data);
  const MatrixXd W = design_matrix_xz(data);
  const VectorXd weights = VectorXd::Ones(data.size());
  return po_weighted_eval(params.pack(), data.k, data.y, W, weights, false).value;
}

VectorXd score(const PoParams& params, const Cohort& data) {
  require_complete_x(data);
  const MatrixXd W = design_matrix_xz(data);
  const VectorXd weights = VectorXd::Ones(data.size());
  return po_weighted_eval(params.pack(), data.k, data.y, W, weights, true).gradient;
}

ObjectiveEval po_weighted_eval(const VectorXd& packed, int k, const VectorXi& y,
                               const MatrixXd& W, const VectorXd& weights,
                               bool need_derivatives) {
  const int n = static_cast<int>(y.size());
  const int p = static_cast<int>(W.cols());
  const int dim = (k - 1) + p;

  ObjectiveEval out;
  out.value = 0.0;
  if (need_derivatives) {
    out.gradient = VectorXd::Zero(dim);
    out.hessian = MatrixXd::Zero(dim, dim);
  }

  const VectorXd eta = W * packed.tail(p);
  // Scalar field per row feeding the beta-block of the Hessian via one GEMM.
  VectorXd c2;
  if (need_derivatives) c2 = VectorXd::Zero(n);

  for (int i = 0; i < n; ++i) {
    const double wt = weights[i];
    if (wt == 0.0) continue;
    const int yi = y[i];
    const double e = eta[i];

    double gam_hi = 1.0, gam_lo = 0.0;
    if (yi <= k - 1) gam_hi = expit(packed[yi - 1] + e);
    if (yi >= 2) gam_lo = expit(packed[yi - 2] + e);
    const double prob = gam_hi - gam_lo;
    if (!(prob > 0.0)) {
      out.value = kNegInf;
      return out;
    }
    out.value += wt * std::log(prob);
    if (!need_derivatives) continue;

    const double g_hi = (yi <= k - 1) ? gam_hi * (1.0 - gam_hi) : 0.0;
    const double g_lo = (yi >= 2) ? gam_lo * (1.0 - gam_lo) : 0.0;
    const double h_hi = g_hi * (1.0 - 2.0 * gam_hi);
    const double h_lo = g_lo * (1.0 - 2.0 * gam_lo);

    const double c_hi = g_hi / prob;
    const double c_lo = g_lo / prob;
    const double s_beta = c_hi - c_lo;

    const int a = yi - 1;  // alpha index of the upper cutpoint (if < k-1... 0-based)
    const int b = yi - 2;  // alpha index of the lower cutpoint

    // Gradient.
    if (yi <= k - 1) out.gradient[a] += wt * c_hi;
    if (yi >= 2) out.gradient[b] -= wt * c_lo;
    out.gradient.tail(p) += (wt * s_beta) * W.row(i).transpose();

    // Hessian: curvature term (h parts) minus outer product of the row score.
    const double t_hi = h_hi / prob;
    const double t_lo = h_lo / prob;
    if (yi <= k - 1) {
      out.hessian(a, a) += wt * (t_hi - c_hi * c_hi);
      out.hessian.row(a).tail(p) += (wt * (t_hi - c_hi * s_beta)) * W.row(i);
    }
    if (yi >= 2) {
      out.hessian(b, b) += wt * (-t_lo - c_lo * c_lo);
      out.hessian.row(b).tail(p) += (wt * (-t_lo + c_lo * s_beta)) * W.row(i);
    }
    if (yi <= k - 1 && yi >= 2) {
      out.hessian(a, b) += wt * c_hi * c_lo;
    }
    c2[i] = wt * ((t_hi - t_lo) - s_beta * s_beta);
  }

  if (need_derivatives) {
    out.hessian.bottomRightCorner(p, p) = W.transpose() * c2.asDiagonal() * W;
    // Mirror the upper alpha block and the alpha-beta strip.
    for (int a = 0; a < k - 1; ++a) {
      for (int b = 0; b < a; ++b) out.hessian(b, a) = out.hessian(a, b);
      out.hessian.col(a).tail(p) = out.hessian.row(a).tail(p).transpose();
    }
  }
  return out;
}

FitResult newton_maximize(const Objective& objective, const VectorXd& init, int k,
                          const FitConfig& config) {
  FitResult result;
  VectorXd current = init;
  ObjectiveEval eval = objective(current, true);
  if (!std::isfinite(eval.value)) {
    throw std::invalid_argument("newton_maximize: objective not finite at the start values");
  }

  int iter = 0;
  for (; iter < config.max_iterations; ++iter) {
    const double score_max = eval.gradient.cwiseAbs().maxCoeff();
    if (score_max < config.score_tol) {
      result.converged = true;
      break;
    }

    // Solve H step = -gradient; fall back to steepest ascent if the solve
    // is unusable (the line search still guards progress).
    VectorXd step;
    Eigen::LDLT<MatrixXd> ldlt(-eval.hessian);
    if (ldlt.info() == Eigen::Success) {
      step = ldlt.solve(eval.gradient);
    }
    if (step.size() == 0 || !step.allFinite() || eval.gradient.dot(step) <= 0.0) {
      step = eval.gradient;
    }

    double scale = 1.0;
    bool accepted = false;
    VectorXd candidate;
    ObjectiveEval trial;
    for (int h = 0; h <= config.max_halvings; ++h, scale *= 0.5) {
      candidate = current + scale * step;
      if (!alphas_increasing(candidate.head(k - 1))) continue;
      trial = objective(candidate, false);
      if (std::isfinite(trial.value) && trial.value >= eval.value) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;  // no improving step found

    const double max_change = (candidate - current).cwiseAbs().maxCoeff();
    current = candidate;
    eval = objective(current, true);
    if (max_change < config.param_tol) {
      result.converged = true;
      ++iter;
      break;
    }
  }

  result.iterations = iter;
  result.estimate = current;
  result.params = PoParams::unpack(current, k);
  result.loglik = eval.value;
  if (!result.converged) {
    // final score check: a stationary point reached exactly on the last pass
    if (eval.gradient.size() > 0 && eval.gradient.cwiseAbs().maxCoeff() < config.score_tol) {
      result.converged = true;
    }
  }

  Eigen::LLT<MatrixXd> llt(-eval.hessian);
  if (llt.info() != Eigen::Success) {
    if (result.converged) {
      throw SingularInformationError("observed information matrix is not positive definite");
    }
    result.cov = MatrixXd::Constant(current.size(), current.size(),
                                    std::numeric_limits<double>::quiet_NaN());
  } else {
    result.cov = llt.solve(MatrixXd::Identity(current.size(), current.size()));
  }
  return result;
}

VectorXd po_start_values(const VectorXi& y, int k, int n_slopes, const VectorXd* weights) {
  VectorXd counts = VectorXd::Zero(k);
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    counts[y[i] - 1] += weights ? (*weights)[i] : 1.0;
  }
  const double total = counts.sum();
  for (int j = 0; j < k; ++j) {
    if (counts[j] <= 0.0) {
      throw std::invalid_argument("outcome level " + std::to_string(j + 1) +
                                  " is unobserved; cutpoints are not estimable");
    }
  }
  VectorXd start = VectorXd::Zero(k - 1 + n_slopes);
  double cum = 0.0;
  for (int j = 0; j < k - 1; ++j) {
    cum += counts[j];
    start[j] = logit(cum / total);
  }
  return start;
}

FitResult fit_po_weighted(const VectorXi& y, const MatrixXd& W, const VectorXd& weights,
                          int k, const VectorXd& init, const FitConfig& config) {
  Objective obj = [&](const VectorXd& v, bool derivs) {
    return po_weighted_eval(v, k, y, W, weights, derivs);
  };
  return newton_maximize(obj, init, k, config);
}

FitResult fit_ml(const Cohort& data, const FitConfig& config) {
  require_complete_x(data);
  const int n = data.size();
  const int p = 1 + static_cast<int>(data.z.cols());
  if (n <= (data.k - 1) + p) {
    throw std::invalid_argument("fit_ml: more parameters than observations");
  }
  const MatrixXd W = design_matrix_xz(data);
  const VectorXd weights = VectorXd::Ones(n);
  const VectorXd init = po_start_values(data.y, data.k, p);
  FitResult fit = fit_po_weighted(data.y, W, weights, data.k, init, config);
  std::vector<std::string> slopes{"beta_x"};
  for (int j = 1; j <= data.z.cols(); ++j) slopes.push_back("beta_z" + std::to_string(j));
  fit.param_names = po_param_names(data.k, slopes);
  return fit;
}

}  // namespace twophase
