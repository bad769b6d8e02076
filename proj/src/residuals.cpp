#include "twophase/residuals.hpp"

#include <cmath>

namespace twophase {

void FittedDistribution::validate() const {
  if (probs.size() < 2) throw std::invalid_argument("fitted distribution needs k >= 2");
  if ((probs.array() < -1e-12).any() || (probs.array() > 1.0 + 1e-12).any()) {
    throw std::invalid_argument("fitted distribution entries outside [0,1]");
  }
  if (std::abs(probs.sum() - 1.0) > 1e-10) {
    throw std::invalid_argument("fitted distribution does not sum to 1");
  }
}

double psr(int y, const FittedDistribution& fstar) {
  fstar.validate();
  const int k = static_cast<int>(fstar.probs.size());
  if (y < 1 || y > k) throw std::invalid_argument("psr: y outside 1..k");
  double below = 0.0, above = 0.0;
  for (int j = 0; j < y - 1; ++j) below += fstar.probs[j];
  for (int j = y; j < k; ++j) above += fstar.probs[j];
  return below - above;
}

namespace {
MatrixXd select_columns(const MatrixXd& z, const std::vector<int>& cols) {
  MatrixXd out(z.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) {
    if (cols[c] < 0 || cols[c] >= z.cols()) {
      throw std::invalid_argument("working model: z column index out of range");
    }
    out.col(static_cast<Eigen::Index>(c)) = z.col(cols[c]);
  }
  return out;
}
}  // namespace

FitResult fit_working_model(const Cohort& data, const std::vector<int>& z_cols,
                            const FitConfig& config) {
  const MatrixXd W = select_columns(data.z, z_cols);
  const VectorXd weights = VectorXd::Ones(data.size());
  const VectorXd init = po_start_values(data.y, data.k, static_cast<int>(z_cols.size()));
  FitResult fit = fit_po_weighted(data.y, W, weights, data.k, init, config);
  std::vector<std::string> slopes;
  for (int c : z_cols) slopes.push_back("beta_z" + std::to_string(c + 1));
  fit.param_names = po_param_names(data.k, slopes);
  return fit;
}

VectorXd psr_all(const FitResult& fit, const Cohort& data, const std::vector<int>& z_cols) {
  if (fit.params.beta.size() != static_cast<Eigen::Index>(z_cols.size())) {
    throw std::invalid_argument("psr_all: fit covariates do not match the requested z columns");
  }
  if (fit.params.n_levels() != data.k) {
    throw std::invalid_argument("psr_all: fit and cohort disagree on k");
  }
  const MatrixXd W = select_columns(data.z, z_cols);
  const int n = data.size();
  const int k = data.k;
  VectorXd out(n);
  for (int i = 0; i < n; ++i) {
    const double eta = W.cols() > 0 ? W.row(i).dot(fit.params.beta) : 0.0;
    // F*(j) cumulative; psr = F(y-1) + F(y) - 1.
    const int yi = data.y[i];
    const double cum_lo = yi >= 2 ? expit(fit.params.alphas[yi - 2] + eta) : 0.0;
    const double cum_hi = yi <= k - 1 ? expit(fit.params.alphas[yi - 1] + eta) : 1.0;
    out[i] = cum_lo + cum_hi - 1.0;
  }
  return out;
}

}  // namespace twophase
