#pragma once

// Training objectives with analytic gradients:
//   cca_loss            penalty form of batch CCA between prompt and response codes
//   kl_loss             prior regularizer on the uncorrelated channel
//   reconstruction_loss masked token cross entropy
//   total_loss          weighted sum of the three

#include <cstdint>
#include <vector>

#include "latentdial/tensor.hpp"

namespace latentdial {

struct LossConfig {
  double lambda1 = 3.9;   // column-sum penalty
  double lambda2 = 6.25;  // sum-of-squares penalty
  double lambda3 = 0.05;  // cross-dimension decorrelation penalty
  double lambda4 = 2.0;   // weight of the CCA loss in the total
  double lambda5 = 2.0;   // weight of the reconstruction loss
  double lambda6 = 0.1;   // weight of the KL term
  double variance_target = 1.0;

  void validate() const;
};

// Condition diagnostics for one view (X or Y) of a batch.
struct ViewDiagnostics {
  std::vector<double> mean_abs;        // |column mean| per dimension
  std::vector<double> variance_dev;    // |sum_m x^2 - C| per dimension
  double max_mean_abs = 0.0;
  double max_variance_dev = 0.0;
  double max_offdiag_gram = 0.0;       // max_{i!=j} |sum_m x_i x_j|
  double max_offdiag_corr = 0.0;       // max_{i!=j} |pearson(x_i, x_j)|
};

struct CcaDiagnostics {
  ViewDiagnostics x;
  ViewDiagnostics y;
  double mean_pair_corr = 0.0;  // mean_i pearson(X^i, Y^i)
  double min_pair_corr = 0.0;
};

struct CcaResult {
  double value = 0.0;
  double match = 0.0;     // sum (X - Y)^2
  double mean_term = 0.0; // lambda1 part
  double var_term = 0.0;  // lambda2 part
  double decor_term = 0.0;// lambda3 part
  Matrix grad_x;
  Matrix grad_y;
  CcaDiagnostics diagnostics;
};

// X, Y: [m x k] with m >= 2. Statistics are batch sums, not means.
CcaResult cca_loss(const Matrix& x, const Matrix& y, const LossConfig& cfg);

ViewDiagnostics view_diagnostics(const Matrix& v, double variance_target);
double pearson(const Matrix& a, std::size_t col_a, const Matrix& b, std::size_t col_b);

struct UncorrelatedPosterior {
  Matrix mu;      // [m x k_u]
  Matrix sigma2;  // [m x k_u], > 0
};

struct KlResult {
  double value = 0.0;
  Matrix grad_mu;
  Matrix grad_sigma2;
  Matrix grad_logvar;  // d/d log(sigma2), for the exp parameterization
};

// sum (mu^2 + sigma2 - log sigma2), no 1/2 factor and no -1 constant.
KlResult kl_loss(const UncorrelatedPosterior& post);

struct ReconstructionResult {
  double value = 0.0;      // mean cross entropy per non-pad token
  std::size_t tokens = 0;
  Matrix grad_logits;      // same shape as logits
};

// logits: [N x V], one row per (sequence, position); targets/mask length N.
ReconstructionResult reconstruction_loss(const Matrix& logits, const std::vector<std::int32_t>& targets,
                                         const std::vector<std::uint8_t>& mask);

struct LossBreakdown {
  double cca = 0.0;
  double reconstruction = 0.0;
  double kl = 0.0;
  double total = 0.0;
  CcaDiagnostics diagnostics;

  double kl_reconstruction_ratio() const {
    return reconstruction > 0.0 ? kl / reconstruction : 0.0;
  }
};

LossBreakdown total_loss(double cca, double reconstruction, double kl, const LossConfig& cfg);

// Row-wise log-softmax in place.
void log_softmax_rows(Matrix& logits);

}  // namespace latentdial
