#include "latentdial/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace latentdial {
namespace {

// Subgradient of |v| with sign(0) = 0.
inline double sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

struct ViewTerms {
  double mean_term = 0.0;
  double var_term = 0.0;
  double decor_term = 0.0;
};

// Adds the penalty gradients of one view into grad and returns the raw penalties.
ViewTerms view_penalties(const Matrix& v, const LossConfig& cfg, Matrix& grad) {
  const std::size_t m = v.rows();
  const std::size_t k = v.cols();
  ViewTerms t;
  std::vector<double> col_sum(k, 0.0), col_sq(k, 0.0);
  for (std::size_t r = 0; r < m; ++r) {
    const double* row = v.row(r);
    for (std::size_t i = 0; i < k; ++i) {
      col_sum[i] += row[i];
      col_sq[i] += row[i] * row[i];
    }
  }
  Matrix gram(k, k);
  gemm(kernels::Trans::Yes, kernels::Trans::No, 1.0, v, v, 0.0, gram);

  Matrix sign_gram(k, k);
  for (std::size_t i = 0; i < k; ++i) {
    t.mean_term += std::abs(col_sum[i]);
    t.var_term += std::abs(col_sq[i] - cfg.variance_target);
    for (std::size_t j = 0; j < k; ++j) {
      if (i == j) continue;
      t.decor_term += std::abs(gram(i, j));
      sign_gram(i, j) = sgn(gram(i, j));
    }
  }
  for (std::size_t r = 0; r < m; ++r) {
    const double* row = v.row(r);
    double* g = grad.row(r);
    for (std::size_t i = 0; i < k; ++i) {
      g[i] += cfg.lambda1 * sgn(col_sum[i]);
      g[i] += cfg.lambda2 * sgn(col_sq[i] - cfg.variance_target) * 2.0 * row[i];
    }
  }
  // d/dV sum_{i!=j} |G_ij| = 2 V S, S = sign(G) with zero diagonal.
  if (cfg.lambda3 != 0.0) gemm(kernels::Trans::No, kernels::Trans::No, 2.0 * cfg.lambda3, v, sign_gram, 1.0, grad);
  return t;
}

}  // namespace

void LossConfig::validate() const {
  for (double l : {lambda1, lambda2, lambda3, lambda4, lambda5, lambda6}) {
    if (!(l >= 0.0)) throw std::invalid_argument("loss weights must be non-negative");
  }
  if (variance_target != 1.0) throw std::invalid_argument("variance target C is fixed at 1");
}

double pearson(const Matrix& a, std::size_t col_a, const Matrix& b, std::size_t col_b) {
  const std::size_t m = a.rows();
  double ma = 0.0, mb = 0.0;
  for (std::size_t r = 0; r < m; ++r) ma += a(r, col_a), mb += b(r, col_b);
  ma /= static_cast<double>(m);
  mb /= static_cast<double>(m);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t r = 0; r < m; ++r) {
    const double da = a(r, col_a) - ma, db = b(r, col_b) - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  const double denom = std::sqrt(saa * sbb);
  return denom > 0.0 ? sab / denom : 0.0;
}

ViewDiagnostics view_diagnostics(const Matrix& v, double variance_target) {
  const std::size_t m = v.rows();
  const std::size_t k = v.cols();
  ViewDiagnostics d;
  d.mean_abs.assign(k, 0.0);
  d.variance_dev.assign(k, 0.0);
  std::vector<double> col_sq(k, 0.0);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t i = 0; i < k; ++i) {
      d.mean_abs[i] += v(r, i);
      col_sq[i] += v(r, i) * v(r, i);
    }
  }
  for (std::size_t i = 0; i < k; ++i) {
    d.mean_abs[i] = std::abs(d.mean_abs[i] / static_cast<double>(m));
    d.variance_dev[i] = std::abs(col_sq[i] - variance_target);
    d.max_mean_abs = std::max(d.max_mean_abs, d.mean_abs[i]);
    d.max_variance_dev = std::max(d.max_variance_dev, d.variance_dev[i]);
  }
  Matrix gram(k, k);
  gemm(kernels::Trans::Yes, kernels::Trans::No, 1.0, v, v, 0.0, gram);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) {
      d.max_offdiag_gram = std::max(d.max_offdiag_gram, std::abs(gram(i, j)));
      d.max_offdiag_corr = std::max(d.max_offdiag_corr, std::abs(pearson(v, i, v, j)));
    }
  }
  return d;
}

CcaResult cca_loss(const Matrix& x, const Matrix& y, const LossConfig& cfg) {
  if (!x.same_shape(y)) throw std::invalid_argument("cca_loss: X and Y must have the same shape");
  if (x.rows() < 2) throw std::invalid_argument("cca_loss: batch size must be >= 2");
  if (x.cols() < 1) throw std::invalid_argument("cca_loss: need at least one dimension");
  const std::size_t m = x.rows();
  const std::size_t k = x.cols();

  CcaResult res;
  res.grad_x = Matrix(m, k);
  res.grad_y = Matrix(m, k);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t i = 0; i < k; ++i) {
      const double d = x(r, i) - y(r, i);
      res.match += d * d;
      res.grad_x(r, i) = 2.0 * d;
      res.grad_y(r, i) = -2.0 * d;
    }
  }
  const ViewTerms tx = view_penalties(x, cfg, res.grad_x);
  const ViewTerms ty = view_penalties(y, cfg, res.grad_y);
  res.mean_term = cfg.lambda1 * (tx.mean_term + ty.mean_term);
  res.var_term = cfg.lambda2 * (tx.var_term + ty.var_term);
  res.decor_term = cfg.lambda3 * (tx.decor_term + ty.decor_term);
  res.value = res.match + res.mean_term + res.var_term + res.decor_term;

  res.diagnostics.x = view_diagnostics(x, cfg.variance_target);
  res.diagnostics.y = view_diagnostics(y, cfg.variance_target);
  double sum_corr = 0.0;
  double min_corr = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < k; ++i) {
    const double c = pearson(x, i, y, i);
    sum_corr += c;
    min_corr = std::min(min_corr, c);
  }
  res.diagnostics.mean_pair_corr = sum_corr / static_cast<double>(k);
  res.diagnostics.min_pair_corr = min_corr;
  return res;
}

KlResult kl_loss(const UncorrelatedPosterior& post) {
  if (!post.mu.same_shape(post.sigma2)) throw std::invalid_argument("kl_loss: mu/sigma2 shape mismatch");
  KlResult res;
  res.grad_mu = Matrix(post.mu.rows(), post.mu.cols());
  res.grad_sigma2 = Matrix(post.mu.rows(), post.mu.cols());
  res.grad_logvar = Matrix(post.mu.rows(), post.mu.cols());
  for (std::size_t i = 0; i < post.mu.size(); ++i) {
    const double mu = post.mu.data()[i];
    const double s2 = post.sigma2.data()[i];
    if (!(s2 > 0.0)) throw std::invalid_argument("kl_loss: variance must be positive");
    res.value += mu * mu + s2 - std::log(s2);
    res.grad_mu.data()[i] = 2.0 * mu;
    res.grad_sigma2.data()[i] = 1.0 - 1.0 / s2;
    res.grad_logvar.data()[i] = s2 - 1.0;
  }
  return res;
}

void log_softmax_rows(Matrix& logits) {
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    double* row = logits.row(r);
    const double mx = *std::max_element(row, row + logits.cols());
    double sum = 0.0;
    for (std::size_t c = 0; c < logits.cols(); ++c) sum += std::exp(row[c] - mx);
    const double lse = mx + std::log(sum);
    for (std::size_t c = 0; c < logits.cols(); ++c) row[c] -= lse;
  }
}

ReconstructionResult reconstruction_loss(const Matrix& logits, const std::vector<std::int32_t>& targets,
                                         const std::vector<std::uint8_t>& mask) {
  if (targets.size() != logits.rows() || mask.size() != logits.rows())
    throw std::invalid_argument("reconstruction_loss: targets/mask length must equal logit rows");
  const std::size_t v = logits.cols();
  ReconstructionResult res;
  res.grad_logits = Matrix(logits.rows(), v);
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    if (!mask[r]) continue;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= v)
      throw std::out_of_range("reconstruction_loss: target id " + std::to_string(targets[r]) +
                              " outside vocabulary of size " + std::to_string(v));
    ++res.tokens;
  }
  if (res.tokens == 0) return res;
  const double inv = 1.0 / static_cast<double>(res.tokens);
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    if (!mask[r]) continue;
    const double* row = logits.row(r);
    double* g = res.grad_logits.row(r);
    const double mx = *std::max_element(row, row + v);
    double sum = 0.0;
    for (std::size_t c = 0; c < v; ++c) {
      g[c] = std::exp(row[c] - mx);
      sum += g[c];
    }
    const double lse = mx + std::log(sum);
    res.value += lse - row[targets[r]];
    for (std::size_t c = 0; c < v; ++c) g[c] = g[c] / sum * inv;
    g[targets[r]] -= inv;
  }
  res.value *= inv;
  return res;
}

LossBreakdown total_loss(double cca, double reconstruction, double kl, const LossConfig& cfg) {
  LossBreakdown b;
  b.cca = cca;
  b.reconstruction = reconstruction;
  b.kl = kl;
  b.total = cfg.lambda4 * cca + cfg.lambda5 * reconstruction + cfg.lambda6 * kl;
  return b;
}

}  // namespace latentdial
