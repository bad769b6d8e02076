#include "twophase/smle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace twophase {

void SieveConfig::validate() const {
  if (df <= degree) throw std::invalid_argument("sieve: df must exceed the spline degree");
  if (df < 1 || degree < 0) throw std::invalid_argument("sieve: df >= 1 and degree >= 0 required");
  if (!(em_tol > 0.0)) throw std::invalid_argument("sieve: em_tol must be positive");
  if (em_max_iterations < 1) throw std::invalid_argument("sieve: em_max_iterations must be positive");
}

// ---------------------------------------------------------------------------
// B-spline basis
// ---------------------------------------------------------------------------

namespace {

/// Cox-de Boor with a clamped knot vector. The degree-0 base intervals are
/// right-closed (first interval closed on both ends) so knot ties resolve to
/// the lower basis function.
void bspline_row(double x, const std::vector<double>& knots, int df, int degree,
                 Eigen::Ref<Eigen::RowVectorXd> out) {
  const int n_base = static_cast<int>(knots.size()) - 1;
  std::vector<double> b(n_base, 0.0);
  int first_nonempty = -1;
  for (int i = 0; i < n_base; ++i) {
    if (knots[i] < knots[i + 1] && first_nonempty < 0) first_nonempty = i;
  }
  for (int i = 0; i < n_base; ++i) {
    if (knots[i] >= knots[i + 1]) continue;  // empty span
    const bool inside = (i == first_nonempty) ? (knots[i] <= x && x <= knots[i + 1])
                                              : (knots[i] < x && x <= knots[i + 1]);
    if (inside) b[i] = 1.0;
  }
  for (int r = 1; r <= degree; ++r) {
    for (int i = 0; i + r < n_base; ++i) {
      double left = 0.0, right = 0.0;
      const double den_l = knots[i + r] - knots[i];
      const double den_r = knots[i + r + 1] - knots[i + 1];
      if (den_l > 0.0) left = (x - knots[i]) / den_l * b[i];
      if (den_r > 0.0) right = (knots[i + r + 1] - x) / den_r * b[i + 1];
      b[i] = left + right;
    }
  }
  for (int l = 0; l < df; ++l) out[l] = b[l];
}

}  // namespace

MatrixXd bspline_basis(const VectorXd& z1, int df, int degree) {
  if (df <= degree) throw std::invalid_argument("bspline_basis: df must exceed the degree");
  const int n = static_cast<int>(z1.size());
  if (n < 2) throw std::invalid_argument("bspline_basis: need at least two values");
  std::vector<double> sorted(z1.data(), z1.data() + n);
  std::sort(sorted.begin(), sorted.end());
  const double lo = sorted.front(), hi = sorted.back();
  if (!(lo < hi)) throw std::invalid_argument("bspline_basis: values are constant");

  const int n_interior = df - degree - 1;
  std::vector<double> knots;
  for (int i = 0; i <= degree; ++i) knots.push_back(lo);
  for (int i = 1; i <= n_interior; ++i) {
    knots.push_back(empirical_quantile(sorted, static_cast<double>(i) / (n_interior + 1)));
  }
  for (int i = 0; i <= degree; ++i) knots.push_back(hi);

  MatrixXd basis(n, df);
  for (int i = 0; i < n; ++i) {
    const double x = std::min(std::max(z1[i], lo), hi);
    bspline_row(x, knots, df, degree, basis.row(i));
  }
  return basis;
}

// ---------------------------------------------------------------------------
// Internal layout: selected rows flat, unselected rows grouped by outcome
// ---------------------------------------------------------------------------

namespace {

struct GroupSpan {
  int level = 0;
  int begin = 0;  // row range in the sorted unselected block
  int end = 0;
  int rows() const { return end - begin; }
};

struct Layout {
  int k = 0;
  int pz = 0;
  VectorXd support;        // d ascending
  VectorXd support_sq;
  MatrixXd base_counts;    // d x s
  // selected part
  VectorXi y_sel;
  MatrixXd W_sel;          // n_sel x (1+pz)
  std::vector<int> sel_v;  // support index per selected row
  MatrixXd B_sel;          // n_sel x s
  // unselected part, sorted by (y, cohort row)
  std::vector<int> unsel_rows;
  MatrixXd Z0;             // n0 x pz
  MatrixXd B0;             // n0 x s
  std::vector<GroupSpan> groups;

  int d() const { return static_cast<int>(support.size()); }
  int n0() const { return static_cast<int>(unsel_rows.size()); }
};

int support_index(const VectorXd& support, double x) {
  const auto begin = support.data();
  const auto end = begin + support.size();
  const auto it = std::lower_bound(begin, end, x);
  if (it == end || *it != x) {
    throw std::logic_error("exposure value missing from the sieve support");
  }
  return static_cast<int>(it - begin);
}

VectorXd distinct_sorted(const std::vector<double>& values) {
  std::vector<double> v = values;
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Layout build_layout(const Cohort& cohort, const MatrixXd& basis, const VectorXd& support) {
  Layout lay;
  lay.k = cohort.k;
  lay.pz = static_cast<int>(cohort.z.cols());
  lay.support = support;
  lay.support_sq = support.array().square();

  std::vector<int> sel, unsel;
  for (int i = 0; i < cohort.size(); ++i) (cohort.s[i] ? sel : unsel).push_back(i);
  std::stable_sort(unsel.begin(), unsel.end(),
                   [&](int a, int b) { return cohort.y[a] < cohort.y[b]; });

  const int ns = static_cast<int>(sel.size());
  lay.y_sel.resize(ns);
  lay.W_sel.resize(ns, 1 + lay.pz);
  lay.B_sel.resize(ns, basis.cols());
  lay.sel_v.resize(ns);
  lay.base_counts = MatrixXd::Zero(lay.d(), basis.cols());
  for (int r = 0; r < ns; ++r) {
    const int i = sel[r];
    lay.y_sel[r] = cohort.y[i];
    lay.W_sel(r, 0) = cohort.x[i];
    lay.W_sel.row(r).tail(lay.pz) = cohort.z.row(i);
    lay.B_sel.row(r) = basis.row(i);
    lay.sel_v[r] = support_index(support, cohort.x[i]);
    lay.base_counts.row(lay.sel_v[r]) += basis.row(i);
  }

  const int n0 = static_cast<int>(unsel.size());
  lay.unsel_rows = unsel;
  lay.Z0.resize(n0, lay.pz);
  lay.B0.resize(n0, basis.cols());
  for (int r = 0; r < n0; ++r) {
    lay.Z0.row(r) = cohort.z.row(unsel[r]);
    lay.B0.row(r) = basis.row(unsel[r]);
  }
  int pos = 0;
  while (pos < n0) {
    GroupSpan g;
    g.level = cohort.y[unsel[pos]];
    g.begin = pos;
    while (pos < n0 && cohort.y[unsel[pos]] == g.level) ++pos;
    g.end = pos;
    lay.groups.push_back(g);
  }
  return lay;
}

/// Initial masses: column-normalized basis-weighted frequencies of the
/// observed exposure values. Columns with no mass fall back to uniform.
MatrixXd initial_masses(const Layout& lay) {
  MatrixXd p = lay.base_counts;
  for (Eigen::Index l = 0; l < p.cols(); ++l) {
    const double total = p.col(l).sum();
    if (total > 0.0) {
      p.col(l) /= total;
    } else {
      p.col(l).setConstant(1.0 / lay.d());
    }
  }
  return p;
}

/// Fills cumulative-probability matrices over one outcome group:
/// gam_hi = expit(alpha_y + beta_x x_v + beta_z'z_i), gam_lo one cutpoint
/// down, with the boundary conventions gam_0 = 0 and gam_k = 1.
void fill_group_gammas(const Layout& lay, const VectorXd& packed, const GroupSpan& g,
                       Eigen::Ref<MatrixXd> gam_hi, Eigen::Ref<MatrixXd> gam_lo) {
  const int k = lay.k;
  const int d = lay.d();
  const int ny = g.rows();
  const double beta_x = packed[k - 1];
  const VectorXd beta_z = packed.tail(lay.pz);
  const VectorXd c = lay.Z0.middleRows(g.begin, ny) * beta_z;

  const auto stable_expit_into = [&](double alpha, Eigen::Ref<MatrixXd> out) {
    out.colwise() = c;
    out.rowwise() += (alpha + beta_x * lay.support.array()).matrix().transpose();
    // expit(t) = (1 + tanh(t/2)) / 2: saturates cleanly, single pass
    out.array() = 0.5 * ((0.5 * out.array()).tanh() + 1.0);
  };

  if (g.level <= k - 1) {
    stable_expit_into(packed[g.level - 1], gam_hi);
  } else {
    gam_hi.setOnes();
  }
  if (g.level >= 2) {
    stable_expit_into(packed[g.level - 2], gam_lo);
  } else {
    gam_lo.setZero();
  }
}

/// P(y_i | x_v, z_i; theta) over all unselected rows (sorted layout).
MatrixXd cell_prob_matrix(const Layout& lay, const VectorXd& packed) {
  MatrixXd pmat(lay.n0(), lay.d());
  MatrixXd hi, lo;
  for (const GroupSpan& g : lay.groups) {
    hi.resize(g.rows(), lay.d());
    lo.resize(g.rows(), lay.d());
    fill_group_gammas(lay, packed, g, hi, lo);
    pmat.middleRows(g.begin, g.rows()) = hi - lo;
  }
  return pmat;
}

/// Selected-rows contribution sum_l B_il log p_{v(i),l}; entries with zero
/// basis weight are skipped so unused masses may sit at zero.
double selected_mass_loglik(const Layout& lay, const MatrixXd& p) {
  double total = 0.0;
  for (int r = 0; r < lay.y_sel.size(); ++r) {
    const int v = lay.sel_v[r];
    for (Eigen::Index l = 0; l < p.cols(); ++l) {
      const double b = lay.B_sel(r, l);
      if (b <= 0.0) continue;
      const double mass = p(v, l);
      if (!(mass > 0.0)) {
        throw std::runtime_error("sieve mass vanished at an observed exposure value");
      }
      total += b * std::log(mass);
    }
  }
  return total;
}

struct EStepQuantities {
  MatrixXd hmat;   // n0 x d: sum_l B_il p_vl
  VectorXd denom;  // n0
};

EStepQuantities estep_quantities(const Layout& lay, const Cohort& cohort,
                                 const MatrixXd& pmat, const MatrixXd& p) {
  EStepQuantities q;
  q.hmat.noalias() = lay.B0 * p.transpose();
  q.denom = (pmat.array() * q.hmat.array()).rowwise().sum();
  for (int r = 0; r < lay.n0(); ++r) {
    if (!(q.denom[r] > 0.0)) {
      throw std::runtime_error("E-step denominator vanished for subject id=" +
                               std::to_string(cohort.id[lay.unsel_rows[r]]));
    }
  }
  return q;
}

/// Weighted PO objective of the M-step: selected rows at weight one plus the
/// unselected pseudo-rows (one per support value) weighted by the posterior
/// masses q. Grouping by outcome level keeps the hot loops columnar.
class ThetaObjective {
 public:
  explicit ThetaObjective(const Layout& lay) : lay_(lay) {
    const int n0 = lay.n0();
    const int d = lay.d();
    gam_hi_.resize(n0, d);
    gam_lo_.resize(n0, d);
    prob_.resize(n0, d);
    chi_.resize(n0, d);
    clo_.resize(n0, d);
    thi_.resize(n0, d);
    tlo_.resize(n0, d);
    sb_.resize(n0, d);
    tmp_.resize(n0, d);
    sel_weights_ = VectorXd::Ones(lay.y_sel.size());
  }

  void set_weights(const MatrixXd* q) { q_ = q; }

  ObjectiveEval operator()(const VectorXd& packed, bool derivs) {
    ObjectiveEval out =
        po_weighted_eval(packed, lay_.k, lay_.y_sel, lay_.W_sel, sel_weights_, derivs);
    if (!std::isfinite(out.value) || lay_.n0() == 0) return out;

    const int k = lay_.k;
    const int pz = lay_.pz;
    const int bx = k - 1;  // packed index of the exposure slope

    for (const GroupSpan& g : lay_.groups) {
      const int ny = g.rows();
      auto hi = gam_hi_.topRows(ny);
      auto lo = gam_lo_.topRows(ny);
      fill_group_gammas(lay_, packed, g, hi, lo);
      auto prob = prob_.topRows(ny);
      const auto qb = q_->middleRows(g.begin, ny).array();

      // Masked cells (q = 0) evaluate against probability 1 so their log
      // contribution is exactly zero.
      prob = (qb > 0.0).select(hi.array() - lo.array(), 1.0).matrix();
      const double group_value = (qb * prob.array().log()).sum();
      out.value += group_value;
      if (!std::isfinite(out.value)) return out;
      if (!derivs) continue;

      auto chi = chi_.topRows(ny);
      auto clo = clo_.topRows(ny);
      auto thi = thi_.topRows(ny);
      auto tlo = tlo_.topRows(ny);
      auto sb = sb_.topRows(ny);
      auto tmp = tmp_.topRows(ny);
      const auto Zg = lay_.Z0.middleRows(g.begin, ny);

      // g/h fields divided by the (masked) probability
      thi.array() = hi.array() * (1.0 - hi.array());
      tlo.array() = lo.array() * (1.0 - lo.array());
      chi.array() = thi.array() / prob.array();
      clo.array() = tlo.array() / prob.array();
      thi.array() = chi.array() * (1.0 - 2.0 * hi.array());
      tlo.array() = clo.array() * (1.0 - 2.0 * lo.array());
      sb.array() = chi.array() - clo.array();

      const bool has_hi = g.level <= k - 1;
      const bool has_lo = g.level >= 2;
      const int a = g.level - 1;
      const int b = g.level - 2;

      if (has_hi) {
        out.gradient[a] += (qb * chi.array()).sum();
        out.hessian(a, a) += (qb * (thi.array() - chi.array().square())).sum();
        tmp.array() = qb * (thi.array() - chi.array() * sb.array());
        const double cx = (tmp.transpose() * lay_.support).sum();
        out.hessian(a, bx) += cx;
        out.hessian(bx, a) += cx;
        const VectorXd cz = Zg.transpose() * tmp.rowwise().sum();
        out.hessian.row(a).tail(pz) += cz.transpose();
        out.hessian.col(a).tail(pz) += cz;
      }
      if (has_lo) {
        out.gradient[b] -= (qb * clo.array()).sum();
        out.hessian(b, b) += (qb * (-tlo.array() - clo.array().square())).sum();
        tmp.array() = qb * (-tlo.array() + clo.array() * sb.array());
        const double cx = (tmp.transpose() * lay_.support).sum();
        out.hessian(b, bx) += cx;
        out.hessian(bx, b) += cx;
        const VectorXd cz = Zg.transpose() * tmp.rowwise().sum();
        out.hessian.row(b).tail(pz) += cz.transpose();
        out.hessian.col(b).tail(pz) += cz;
      }
      if (has_hi && has_lo) {
        const double cross = (qb * chi.array() * clo.array()).sum();
        out.hessian(a, b) += cross;
        out.hessian(b, a) += cross;
      }

      // beta gradient
      tmp.array() = qb * sb.array();
      out.gradient[bx] += (tmp.transpose() * lay_.support).sum();
      out.gradient.tail(pz) += Zg.transpose() * tmp.rowwise().sum();

      // beta-beta curvature
      tmp.array() = qb * ((thi.array() - tlo.array()) - sb.array().square());
      out.hessian(bx, bx) += (tmp.transpose() * lay_.support_sq).sum();
      const VectorXd xz = Zg.transpose() * (tmp * lay_.support);
      out.hessian.row(bx).tail(pz) += xz.transpose();
      out.hessian.col(bx).tail(pz) += xz;
      const VectorXd rs = tmp.rowwise().sum();
      out.hessian.bottomRightCorner(pz, pz) += Zg.transpose() * rs.asDiagonal() * Zg;
    }
    return out;
  }

 private:
  const Layout& lay_;
  const MatrixXd* q_ = nullptr;
  VectorXd sel_weights_;
  MatrixXd gam_hi_, gam_lo_, prob_, chi_, clo_, thi_, tlo_, sb_, tmp_;
};

}  // namespace

// ---------------------------------------------------------------------------
// EM fit
// ---------------------------------------------------------------------------

EmFit em_fit(const Cohort& cohort, const SieveConfig& config, const FitConfig& newton_config) {
  config.validate();
  cohort.validate();
  if (config.z1_col < 0 || config.z1_col >= cohort.z.cols()) {
    throw std::invalid_argument("em_fit: z1 column out of range");
  }

  std::vector<double> observed_x;
  for (int i = 0; i < cohort.size(); ++i) {
    if (cohort.s[i]) observed_x.push_back(cohort.x[i]);
  }
  if (observed_x.empty()) throw std::invalid_argument("em_fit: nobody selected");
  const VectorXd support = distinct_sorted(observed_x);
  if (support.size() < 2) {
    throw std::invalid_argument("em_fit: need at least two distinct exposure values");
  }

  const MatrixXd basis = bspline_basis(cohort.z.col(config.z1_col), config.df, config.degree);
  const Layout lay = build_layout(cohort, basis, support);

  MatrixXd p = initial_masses(lay);
  VectorXd theta = po_start_values(cohort.y, cohort.k, 1 + lay.pz);

  FitConfig inner = newton_config;
  inner.compute_cov = false;

  ThetaObjective objective(lay);
  MatrixXd q;

  MatrixXd pmat = cell_prob_matrix(lay, theta);
  EStepQuantities eq = estep_quantities(lay, cohort, pmat, p);
  const VectorXd sel_ones = VectorXd::Ones(lay.y_sel.size());
  const auto observed_loglik = [&](const VectorXd& th, const MatrixXd& masses,
                                   const EStepQuantities& e) {
    double value = po_weighted_eval(th, lay.k, lay.y_sel, lay.W_sel, sel_ones, false).value;
    value += selected_mass_loglik(lay, masses);
    value += e.denom.array().log().sum();
    return value;
  };

  EmFit result;
  double loglik = observed_loglik(theta, p, eq);
  result.trace.push_back({0, loglik, std::numeric_limits<double>::quiet_NaN()});

  bool converged = false;
  int iteration = 0;
  while (iteration < config.em_max_iterations) {
    ++iteration;

    // E-step weights at the current parameters.
    q = (pmat.array() * eq.hmat.array()).colwise() / eq.denom.array();

    // M-step: theta by a full weighted Newton solve, masses in closed form.
    objective.set_weights(&q);
    Objective fn = [&](const VectorXd& v, bool derivs) { return objective(v, derivs); };
    FitResult step = newton_maximize(fn, theta, cohort.k, inner);

    MatrixXd ratio = pmat.array().colwise() / eq.denom.array();
    MatrixXd p_new = lay.base_counts + p.cwiseProduct(ratio.transpose() * lay.B0);
    for (Eigen::Index l = 0; l < p_new.cols(); ++l) {
      const double total = p_new.col(l).sum();
      if (total > 0.0) {
        p_new.col(l) /= total;
      } else {
        p_new.col(l).setConstant(1.0 / lay.d());
      }
    }

    const double change = std::max((step.estimate - theta).cwiseAbs().maxCoeff(),
                                   (p_new - p).cwiseAbs().maxCoeff());
    theta = step.estimate;
    p = std::move(p_new);

    pmat = cell_prob_matrix(lay, theta);
    eq = estep_quantities(lay, cohort, pmat, p);
    const double loglik_new = observed_loglik(theta, p, eq);
    result.trace.push_back({iteration, loglik_new, change});

    if (std::abs(loglik_new - loglik) < config.em_tol) {
      loglik = loglik_new;
      converged = true;
      break;
    }
    loglik = loglik_new;
  }

  result.fit.estimate = theta;
  result.fit.params = PoParams::unpack(theta, cohort.k);
  result.fit.converged = converged;
  result.fit.iterations = iteration;
  result.fit.loglik = loglik;
  std::vector<std::string> slopes{"beta_x"};
  for (int j = 1; j <= lay.pz; ++j) slopes.push_back("beta_z" + std::to_string(j));
  result.fit.param_names = po_param_names(cohort.k, slopes);

  result.state.support = support;
  result.state.p = p;
  result.state.basis = basis;
  return result;
}

// ---------------------------------------------------------------------------
// Profile-likelihood covariance
// ---------------------------------------------------------------------------

namespace {

/// pl(theta): observed-data log-likelihood maximized over the masses with
/// theta held fixed, via the fixed-theta EM warm-started at p0.
double profile_loglik(const Layout& lay, const Cohort& cohort, const VectorXd& theta,
                      const MatrixXd& p0, const SieveConfig& config) {
  for (int j = 0; j + 1 < lay.k - 1; ++j) {
    if (!(theta[j] < theta[j + 1])) {
      throw std::invalid_argument("profile_loglik: perturbed cutpoints are no longer increasing");
    }
  }
  const MatrixXd pmat = cell_prob_matrix(lay, theta);
  const VectorXd sel_ones = VectorXd::Ones(lay.y_sel.size());
  const double sel_po =
      po_weighted_eval(theta, lay.k, lay.y_sel, lay.W_sel, sel_ones, false).value;

  MatrixXd p = p0;
  EStepQuantities eq = estep_quantities(lay, cohort, pmat, p);
  double loglik = sel_po + selected_mass_loglik(lay, p) + eq.denom.array().log().sum();

  for (int iter = 0; iter < config.em_max_iterations; ++iter) {
    MatrixXd ratio = pmat.array().colwise() / eq.denom.array();
    MatrixXd p_new = lay.base_counts + p.cwiseProduct(ratio.transpose() * lay.B0);
    for (Eigen::Index l = 0; l < p_new.cols(); ++l) {
      const double total = p_new.col(l).sum();
      if (total > 0.0) {
        p_new.col(l) /= total;
      } else {
        p_new.col(l).setConstant(1.0 / lay.d());
      }
    }
    p = std::move(p_new);
    eq = estep_quantities(lay, cohort, pmat, p);
    const double loglik_new = sel_po + selected_mass_loglik(lay, p) + eq.denom.array().log().sum();
    const double change = std::abs(loglik_new - loglik);
    loglik = loglik_new;
    if (change < config.em_tol) return loglik;
  }
  throw std::runtime_error("profile_loglik: inner EM did not converge");
}

}  // namespace

MatrixXd profile_covariance(const PoParams& theta_hat, const SieveState& state,
                            const Cohort& cohort, const SieveConfig& config) {
  config.validate();
  const Layout lay = build_layout(cohort, state.basis, state.support);
  const VectorXd theta = theta_hat.pack();
  const int dim = static_cast<int>(theta.size());
  const double h = config.h_scale / std::sqrt(static_cast<double>(cohort.size()));

  const double pl0 = profile_loglik(lay, cohort, theta, state.p, config);
  VectorXd pl_single(dim);
  for (int v = 0; v < dim; ++v) {
    VectorXd t = theta;
    t[v] += h;
    pl_single[v] = profile_loglik(lay, cohort, t, state.p, config);
  }
  MatrixXd hess(dim, dim);
  for (int v = 0; v < dim; ++v) {
    for (int l = v; l < dim; ++l) {
      VectorXd t = theta;
      t[v] += h;
      t[l] += h;
      const double pl_vl = profile_loglik(lay, cohort, t, state.p, config);
      const double value = (pl_vl - pl_single[v] - pl_single[l] + pl0) / (h * h);
      hess(v, l) = value;
      hess(l, v) = value;
    }
  }
  hess = ((hess + hess.transpose()) / 2.0).eval();

  Eigen::LLT<MatrixXd> llt(-hess);
  if (llt.info() != Eigen::Success) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(-hess);
    std::ostringstream msg;
    msg << "profile covariance: negative Hessian is not positive definite; eigenvalues:";
    for (int i = 0; i < dim; ++i) msg << " " << es.eigenvalues()[i];
    throw SingularInformationError(msg.str());
  }
  return llt.solve(MatrixXd::Identity(dim, dim));
}

// ---------------------------------------------------------------------------
// E-step introspection
// ---------------------------------------------------------------------------

EStepResult smle_estep(const PoParams& theta, const SieveState& state, const Cohort& cohort) {
  const Layout lay = build_layout(cohort, state.basis, state.support);
  const VectorXd packed = theta.pack();
  const MatrixXd pmat = cell_prob_matrix(lay, packed);
  const EStepQuantities eq = estep_quantities(lay, cohort, pmat, state.p);
  EStepResult out;
  out.rows = lay.unsel_rows;
  out.q = (pmat.array() * eq.hmat.array()).colwise() / eq.denom.array();
  out.denom = eq.denom;
  return out;
}

MatrixXd smle_estep_psi(const PoParams& theta, const SieveState& state,
                        const Cohort& cohort, int subject) {
  if (subject < 0 || subject >= cohort.size() || cohort.s[subject]) {
    throw std::invalid_argument("smle_estep_psi: subject must be an unselected row");
  }
  const int d = static_cast<int>(state.support.size());
  const int s_n = static_cast<int>(state.p.cols());
  MatrixXd psi(d, s_n);
  const Eigen::RowVectorXd b = state.basis.row(subject);
  for (int v = 0; v < d; ++v) {
    const double prob =
        cell_probabilities(theta, state.support[v], cohort.z.row(subject))[cohort.y[subject] - 1];
    psi.row(v) = prob * b.array() * state.p.row(v).array();
  }
  const double total = psi.sum();
  if (!(total > 0.0)) throw std::runtime_error("smle_estep_psi: degenerate posterior");
  return psi / total;
}

}  // namespace twophase
