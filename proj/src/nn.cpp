#include "latentdial/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "latentdial/rng.hpp"

namespace latentdial {

using kernels::Trans;

void Param::init_uniform(Rng& rng, double scale) {
  for (auto& v : value.values()) v = rng.uniform(-scale, scale);
  grad.fill(0.0);
}

void add_row_bias(Matrix& out, const Matrix& bias) {
  const double* b = bias.data();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    double* o = out.row(r);
    for (std::size_t c = 0; c < out.cols(); ++c) o[c] += b[c];
  }
}

void accumulate_col_sums(const Matrix& src, Matrix& bias_grad) {
  double* g = bias_grad.data();
  for (std::size_t r = 0; r < src.rows(); ++r) {
    const double* s = src.row(r);
    for (std::size_t c = 0; c < src.cols(); ++c) g[c] += s[c];
  }
}

// ---------------------------------------------------------------- Linear

Linear::Linear(const std::string& name, std::size_t in, std::size_t out, bool bias)
    : w_(name + ".w", out, in), b_(name + ".b", 1, bias ? out : 0), has_bias_(bias) {}

void Linear::forward(const Matrix& x, Matrix& out) const {
  linear_forward(x, w_.value, nullptr, out);
  if (has_bias_) add_row_bias(out, b_.value);
}

void Linear::backward(const Matrix& x, const Matrix& dout, Matrix* dx) {
  gemm(Trans::Yes, Trans::No, 1.0, dout, x, 1.0, w_.grad);
  if (has_bias_) accumulate_col_sums(dout, b_.grad);
  if (dx) {
    dx->resize(x.rows(), x.cols());
    gemm(Trans::No, Trans::No, 1.0, dout, w_.value, 0.0, *dx);
  }
}

void Linear::collect(ParamRefs& out) {
  out.push_back(&w_);
  if (has_bias_) out.push_back(&b_);
}

// ---------------------------------------------------------------- Embedding

Embedding::Embedding(const std::string& name, std::size_t vocab, std::size_t dim)
    : table_(name, vocab, dim) {}

void Embedding::lookup(const std::vector<TokenId>& ids, Matrix& out) const {
  const std::size_t d = dim();
  out.resize(ids.size(), d);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    const auto id = ids[r];
    if (id < 0 || static_cast<std::size_t>(id) >= vocab())
      throw std::out_of_range("embedding lookup: token id " + std::to_string(id) + " out of range");
    std::copy_n(table_.value.row(static_cast<std::size_t>(id)), d, out.row(r));
  }
}

void Embedding::backward(const std::vector<TokenId>& ids, const Matrix& dout) {
  const std::size_t d = dim();
  for (std::size_t r = 0; r < ids.size(); ++r) {
    double* g = table_.grad.row(static_cast<std::size_t>(ids[r]));
    const double* s = dout.row(r);
    for (std::size_t c = 0; c < d; ++c) g[c] += s[c];
  }
}

// ---------------------------------------------------------------- GRU

Gru::Gru(const std::string& name, std::size_t in, std::size_t hidden, std::size_t cond)
    : w_ih_(name + ".w_ih", 3 * hidden, in),
      w_hh_(name + ".w_hh", 3 * hidden, hidden),
      b_ih_(name + ".b_ih", 1, 3 * hidden),
      b_hh_(name + ".b_hh", 1, 3 * hidden),
      w_ch_(name + ".w_cond", cond ? 3 * hidden : 0, cond),
      cond_dim_(cond) {}

void Gru::collect(ParamRefs& out) {
  out.push_back(&w_ih_);
  out.push_back(&w_hh_);
  out.push_back(&b_ih_);
  out.push_back(&b_hh_);
  if (cond_dim_) out.push_back(&w_ch_);
}

void Gru::project_cond(const Matrix& cond, Matrix& out) const {
  require_shape(cond.cols() == cond_dim_, "gru conditioning width");
  linear_forward(cond, w_ch_.value, nullptr, out);
}

namespace {

// Gate nonlinearity for one row; gi/gh are 3H wide, writes act (3H) and h_out (H).
inline void gru_cell(std::size_t hidden, const double* gi, const double* gh, const double* h_prev,
                     double* act, double* h_out) {
  const double* gi_r = gi;
  const double* gi_z = gi + hidden;
  const double* gi_n = gi + 2 * hidden;
  const double* gh_r = gh;
  const double* gh_z = gh + hidden;
  const double* gh_n = gh + 2 * hidden;
  for (std::size_t j = 0; j < hidden; ++j) {
    const double r = sigmoid(gi_r[j] + gh_r[j]);
    const double z = sigmoid(gi_z[j] + gh_z[j]);
    const double n = std::tanh(gi_n[j] + r * gh_n[j]);
    act[j] = r;
    act[hidden + j] = z;
    act[2 * hidden + j] = n;
    h_out[j] = (1.0 - z) * n + z * h_prev[j];
  }
}

}  // namespace

void Gru::forward(const Matrix& x, std::size_t m, const std::vector<std::uint8_t>& mask,
                  const Matrix& h0, const Matrix* cond, GruCache& cache) const {
  const std::size_t hdim = hidden();
  const std::size_t g3 = 3 * hdim;
  require_shape(m > 0 && x.rows() % m == 0, "gru input rows must be a multiple of the batch size");
  require_shape(x.cols() == in_dim(), "gru input width");
  require_shape(mask.size() == x.rows(), "gru mask length");
  require_shape(h0.rows() == m && h0.cols() == hdim, "gru initial state");
  const std::size_t steps = x.rows() / m;

  cache.m = m;
  cache.steps = steps;
  cache.x = x;
  cache.mask = mask;
  linear_forward(x, w_ih_.value, nullptr, cache.gi);
  add_row_bias(cache.gi, b_ih_.value);
  if (cond_dim_) {
    require_shape(cond && cond->rows() == m, "gru conditioning rows");
    cache.cond = *cond;
    Matrix cp;
    project_cond(*cond, cp);
    for (std::size_t t = 0; t < steps; ++t) {
      for (std::size_t i = 0; i < m; ++i) {
        double* g = cache.gi.row(t * m + i);
        const double* c = cp.row(i);
        for (std::size_t j = 0; j < g3; ++j) g[j] += c[j];
      }
    }
  } else {
    cache.cond = Matrix();
  }

  cache.gh.resize(steps * m, g3);
  cache.act.resize(steps * m, g3);
  cache.h.resize((steps + 1) * m, hdim);
  std::copy(h0.values().begin(), h0.values().end(), cache.h.data());

  const auto& kt = kernels::active_kernels();
  std::vector<double> h_new(hdim);
  for (std::size_t t = 0; t < steps; ++t) {
    const double* h_prev = cache.h.row(t * m);
    double* gh = cache.gh.row(t * m);
    kt.gemm(Trans::No, Trans::Yes, m, g3, hdim, 1.0, h_prev, hdim, w_hh_.value.data(), hdim, 0.0,
            gh, g3);
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t row = t * m + i;
      double* ghr = cache.gh.row(row);
      for (std::size_t j = 0; j < g3; ++j) ghr[j] += b_hh_.value.data()[j];
      const double* hp = cache.h.row(row);
      double* hn = cache.h.row(row + m);
      if (mask[row]) {
        gru_cell(hdim, cache.gi.row(row), ghr, hp, cache.act.row(row), hn);
      } else {
        std::fill_n(cache.act.row(row), g3, 0.0);
        std::copy_n(hp, hdim, hn);
      }
    }
  }
}

void Gru::backward(const GruCache& cache, const Matrix& dh_steps, const Matrix& dh_final,
                   Matrix* dx, Matrix* dh0, Matrix* dcond) {
  const std::size_t hdim = hidden();
  const std::size_t g3 = 3 * hdim;
  const std::size_t m = cache.m;
  const std::size_t steps = cache.steps;
  const auto& kt = kernels::active_kernels();

  Matrix carry(m, hdim);
  if (!dh_final.empty()) carry = dh_final;
  Matrix dgi(steps * m, g3);
  Matrix dgh(m, g3);
  Matrix dprev(m, hdim);

  for (std::size_t tt = steps; tt-- > 0;) {
    if (!dh_steps.empty()) {
      for (std::size_t i = 0; i < m; ++i) {
        const double* s = dh_steps.row(tt * m + i);
        double* c = carry.row(i);
        for (std::size_t j = 0; j < hdim; ++j) c[j] += s[j];
      }
    }
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t row = tt * m + i;
      double* dg = dgh.row(i);
      double* dgi_row = dgi.row(row);
      double* dp = dprev.row(i);
      const double* dh = carry.row(i);
      if (!cache.mask[row]) {
        std::fill_n(dg, g3, 0.0);
        std::copy_n(dh, hdim, dp);
        continue;
      }
      const double* a = cache.act.row(row);
      const double* gh = cache.gh.row(row);
      const double* hp = cache.h.row(row);
      for (std::size_t j = 0; j < hdim; ++j) {
        const double r = a[j], z = a[hdim + j], n = a[2 * hdim + j];
        const double dn = dh[j] * (1.0 - z);
        const double dz = dh[j] * (hp[j] - n);
        const double dan = dn * (1.0 - n * n);
        const double dr = dan * gh[2 * hdim + j];
        const double dar = dr * r * (1.0 - r);
        const double daz = dz * z * (1.0 - z);
        dgi_row[j] = dar;
        dgi_row[hdim + j] = daz;
        dgi_row[2 * hdim + j] = dan;
        dg[j] = dar;
        dg[hdim + j] = daz;
        dg[2 * hdim + j] = dan * r;
        dp[j] = dh[j] * z;
      }
    }
    // dprev += dgh * W_hh ; dW_hh += dgh^T h_prev ; db_hh += sum dgh
    kt.gemm(Trans::No, Trans::No, m, hdim, g3, 1.0, dgh.data(), g3, w_hh_.value.data(), hdim, 1.0,
            dprev.data(), hdim);
    kt.gemm(Trans::Yes, Trans::No, g3, hdim, m, 1.0, dgh.data(), g3, cache.h.row(tt * m), hdim, 1.0,
            w_hh_.grad.data(), hdim);
    accumulate_col_sums(dgh, b_hh_.grad);
    std::swap(carry, dprev);
  }
  if (dh0) *dh0 = carry;

  gemm(Trans::Yes, Trans::No, 1.0, dgi, cache.x, 1.0, w_ih_.grad);
  accumulate_col_sums(dgi, b_ih_.grad);
  if (dx) {
    dx->resize(cache.x.rows(), cache.x.cols());
    gemm(Trans::No, Trans::No, 1.0, dgi, w_ih_.value, 0.0, *dx);
  }
  if (cond_dim_) {
    Matrix dsum(m, g3);
    for (std::size_t t = 0; t < steps; ++t) {
      for (std::size_t i = 0; i < m; ++i) {
        const double* s = dgi.row(t * m + i);
        double* d = dsum.row(i);
        for (std::size_t j = 0; j < g3; ++j) d[j] += s[j];
      }
    }
    gemm(Trans::Yes, Trans::No, 1.0, dsum, cache.cond, 1.0, w_ch_.grad);
    if (dcond) {
      dcond->resize(m, cond_dim_);
      gemm(Trans::No, Trans::No, 1.0, dsum, w_ch_.value, 0.0, *dcond);
    }
  } else if (dcond) {
    *dcond = Matrix();
  }
}

void Gru::step(const Matrix& x, const Matrix& h_prev, const Matrix& cond_proj, Matrix& h_next) const {
  const std::size_t hdim = hidden();
  const std::size_t n = x.rows();
  Matrix gi, gh;
  linear_forward(x, w_ih_.value, nullptr, gi);
  add_row_bias(gi, b_ih_.value);
  if (cond_dim_) {
    require_shape(cond_proj.rows() == n && cond_proj.cols() == 3 * hdim, "gru step conditioning");
    for (std::size_t i = 0; i < gi.size(); ++i) gi.data()[i] += cond_proj.data()[i];
  }
  linear_forward(h_prev, w_hh_.value, nullptr, gh);
  add_row_bias(gh, b_hh_.value);
  h_next.resize(n, hdim);
  std::vector<double> act(3 * hdim);
  for (std::size_t i = 0; i < n; ++i)
    gru_cell(hdim, gi.row(i), gh.row(i), h_prev.row(i), act.data(), h_next.row(i));
}

// ---------------------------------------------------------------- attention

void masked_softmax(const double* scores, const std::uint8_t* valid, std::size_t n, double* out) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j)
    if (valid[j]) mx = std::max(mx, scores[j]);
  if (mx == -std::numeric_limits<double>::infinity())
    throw std::invalid_argument("attention: every memory position is masked");
  double sum = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    out[j] = valid[j] ? std::exp(scores[j] - mx) : 0.0;
    sum += out[j];
  }
  for (std::size_t j = 0; j < n; ++j) out[j] /= sum;
}

BilinearAttention::BilinearAttention(const std::string& name, std::size_t query_dim,
                                     std::size_t memory_dim)
    : w_(name + ".w", memory_dim, query_dim) {}

void BilinearAttention::forward(const Matrix& queries, std::size_t m, const Matrix& memory,
                                const std::vector<std::uint8_t>& memory_mask,
                                AttentionCache& cache) const {
  const std::size_t hm = memory.cols();
  const std::size_t tm = memory.rows() / m;
  const std::size_t n = queries.rows();
  linear_forward(queries, w_.value, nullptr, cache.proj_query);
  cache.weights.resize(n, tm);
  cache.context.resize(n, hm);
  std::vector<double> scores(tm);
  std::vector<std::uint8_t> valid(tm);
  const auto& kt = kernels::active_kernels();
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t i = r % m;
    const double* u = cache.proj_query.row(r);
    for (std::size_t j = 0; j < tm; ++j) {
      valid[j] = memory_mask[j * m + i];
      scores[j] = valid[j] ? kt.dot(hm, u, memory.row(j * m + i)) : 0.0;
    }
    double* w = cache.weights.row(r);
    masked_softmax(scores.data(), valid.data(), tm, w);
    double* ctx = cache.context.row(r);
    for (std::size_t j = 0; j < tm; ++j)
      if (w[j] != 0.0) kt.axpy(hm, w[j], memory.row(j * m + i), ctx);
  }
}

void BilinearAttention::backward(const Matrix& queries, std::size_t m, const Matrix& memory,
                                 const std::vector<std::uint8_t>& memory_mask,
                                 const AttentionCache& cache, const Matrix& dcontext,
                                 Matrix& dqueries, Matrix& dmemory) {
  const std::size_t hm = memory.cols();
  const std::size_t tm = memory.rows() / m;
  const std::size_t n = queries.rows();
  const auto& kt = kernels::active_kernels();
  if (!dmemory.same_shape(memory)) dmemory.resize(memory.rows(), memory.cols());
  Matrix du(n, hm);
  std::vector<double> dalpha(tm);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t i = r % m;
    const double* w = cache.weights.row(r);
    const double* dc = dcontext.row(r);
    const double* u = cache.proj_query.row(r);
    double weighted = 0.0;
    for (std::size_t j = 0; j < tm; ++j) {
      dalpha[j] = memory_mask[j * m + i] ? kt.dot(hm, dc, memory.row(j * m + i)) : 0.0;
      weighted += w[j] * dalpha[j];
    }
    double* dur = du.row(r);
    for (std::size_t j = 0; j < tm; ++j) {
      if (!memory_mask[j * m + i]) continue;
      const double ds = w[j] * (dalpha[j] - weighted);
      double* dm = dmemory.row(j * m + i);
      kt.axpy(hm, w[j], dc, dm);
      kt.axpy(hm, ds, u, dm);
      kt.axpy(hm, ds, memory.row(j * m + i), dur);
    }
  }
  gemm(Trans::Yes, Trans::No, 1.0, du, queries, 1.0, w_.grad);
  dqueries.resize(n, queries.cols());
  gemm(Trans::No, Trans::No, 1.0, du, w_.value, 0.0, dqueries);
}

}  // namespace latentdial
