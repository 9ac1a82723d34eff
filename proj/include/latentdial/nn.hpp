#pragma once

// Layers with explicit forward caches and hand-written backward passes.
// Sequences are stored time-major: row t*m + i holds sequence i at step t.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "latentdial/data.hpp"
#include "latentdial/tensor.hpp"

namespace latentdial {

class Rng;

struct Param {
  std::string name;
  Matrix value;
  Matrix grad;

  Param() = default;
  Param(std::string n, std::size_t rows, std::size_t cols)
      : name(std::move(n)), value(rows, cols), grad(rows, cols) {}

  void init_uniform(Rng& rng, double scale);
  void zero_grad() { grad.fill(0.0); }
};

using ParamRefs = std::vector<Param*>;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void add_row_bias(Matrix& out, const Matrix& bias);
void accumulate_col_sums(const Matrix& src, Matrix& bias_grad);

class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, std::size_t in, std::size_t out, bool bias = true);

  std::size_t in_dim() const { return w_.value.cols(); }
  std::size_t out_dim() const { return w_.value.rows(); }

  void forward(const Matrix& x, Matrix& out) const;
  // Accumulates parameter grads; writes dx when non-null (overwrites).
  void backward(const Matrix& x, const Matrix& dout, Matrix* dx);

  void collect(ParamRefs& out);
  Param& weight() { return w_; }
  Param& bias() { return b_; }

 private:
  Param w_;
  Param b_;
  bool has_bias_ = true;
};

class Embedding {
 public:
  Embedding() = default;
  Embedding(const std::string& name, std::size_t vocab, std::size_t dim);

  std::size_t dim() const { return table_.value.cols(); }
  std::size_t vocab() const { return table_.value.rows(); }

  void lookup(const std::vector<TokenId>& ids, Matrix& out) const;
  void backward(const std::vector<TokenId>& ids, const Matrix& dout);
  void collect(ParamRefs& out) { out.push_back(&table_); }
  Param& table() { return table_; }

 private:
  Param table_;
};

struct GruCache {
  std::size_t m = 0;
  std::size_t steps = 0;
  Matrix x;        // [T*m x In]
  Matrix cond;     // [m x C], empty when unconditioned
  Matrix gi;       // input projections + b_ih (+ cond projection)  [T*m x 3H]
  Matrix gh;       // hidden projections + b_hh                     [T*m x 3H]
  Matrix act;      // r, z, n activations                           [T*m x 3H]
  Matrix h;        // h_0 .. h_T                                    [(T+1)*m x H]
  std::vector<std::uint8_t> mask;  // [T*m]

  const double* state(std::size_t t, std::size_t i, std::size_t hidden) const {
    return h.data() + ((t * m) + i) * hidden;
  }
};

// Single-layer GRU, gates ordered (reset, update, candidate):
//   r = s(Wx_r + b_r + Uh_r + c_r), z = s(Wx_z + b_z + Uh_z + c_z)
//   n = tanh(Wx_n + b_n + r * (Uh_n + c_n)),  h' = (1 - z) * n + z * h
// Masked steps carry h through unchanged. An optional per-sequence
// conditioning vector is projected once and added to every step's input gates.
class Gru {
 public:
  Gru() = default;
  Gru(const std::string& name, std::size_t in, std::size_t hidden, std::size_t cond = 0);

  std::size_t in_dim() const { return w_ih_.value.cols(); }
  std::size_t hidden() const { return w_hh_.value.cols(); }
  std::size_t cond_dim() const { return cond_dim_; }

  void forward(const Matrix& x, std::size_t m, const std::vector<std::uint8_t>& mask,
               const Matrix& h0, const Matrix* cond, GruCache& cache) const;

  // dh_steps: gradient w.r.t. each step's output [T*m x H] (may be empty).
  // dh_final: gradient w.r.t. h_T [m x H] (may be empty). Outputs are overwritten.
  void backward(const GruCache& cache, const Matrix& dh_steps, const Matrix& dh_final, Matrix* dx,
                Matrix* dh0, Matrix* dcond);

  // Projects the conditioning vector to gate space: [n x 3H].
  void project_cond(const Matrix& cond, Matrix& out) const;
  // One inference step without caching. cond_proj may be empty.
  void step(const Matrix& x, const Matrix& h_prev, const Matrix& cond_proj, Matrix& h_next) const;

  void collect(ParamRefs& out);

 private:
  Param w_ih_, w_hh_, b_ih_, b_hh_, w_ch_;
  std::size_t cond_dim_ = 0;
};

// Multiplicative (bilinear) attention over masked memory:
//   score_j = query^T W memory_j, weights = softmax over unmasked j,
//   context = sum_j weights_j memory_j.
struct AttentionCache {
  Matrix proj_query;  // [N x Hm]
  Matrix weights;     // [N x Tm]
  Matrix context;     // [N x Hm]
};

class BilinearAttention {
 public:
  BilinearAttention() = default;
  BilinearAttention(const std::string& name, std::size_t query_dim, std::size_t memory_dim);

  // queries: [N x Hq] with N = T_q * m time-major; memory: [T_m*m x Hm] time-major.
  void forward(const Matrix& queries, std::size_t m, const Matrix& memory,
               const std::vector<std::uint8_t>& memory_mask, AttentionCache& cache) const;
  void backward(const Matrix& queries, std::size_t m, const Matrix& memory,
                const std::vector<std::uint8_t>& memory_mask, const AttentionCache& cache,
                const Matrix& dcontext, Matrix& dqueries, Matrix& dmemory);

  void collect(ParamRefs& out) { out.push_back(&w_); }

 private:
  Param w_;  // [Hm x Hq]
};

// softmax over the unmasked entries of one row of scores; throws when all masked.
void masked_softmax(const double* scores, const std::uint8_t* valid, std::size_t n, double* out);

}  // namespace latentdial
