// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 when any fails.
// Usage: acceptance [criterion ...]   (no arguments runs all ten)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "latentdial/checkpoint.hpp"
#include "latentdial/config.hpp"
#include "latentdial/inference.hpp"
#include "latentdial/kernels.hpp"
#include "latentdial/latent_inspect.hpp"
#include "latentdial/losses.hpp"
#include "latentdial/metrics.hpp"
#include "latentdial/rng.hpp"
#include "latentdial/synth_data.hpp"
#include "latentdial/training.hpp"

using namespace latentdial;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... a) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, a...);
  return buf;
}

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale) {
  Matrix m(r, c);
  for (double& v : m.values()) v = scale * rng.normal();
  return m;
}

// ---------------------------------------------------------------- 1

// True when a perturbation of x(r, i) can reach a point where one of the
// absolute-value terms of its view changes sign.
bool near_kink(const Matrix& v, std::size_t i, double tol) {
  double sum = 0.0, sq = 0.0;
  for (std::size_t r = 0; r < v.rows(); ++r) sum += v(r, i), sq += v(r, i) * v(r, i);
  if (std::abs(sum) < tol || std::abs(sq - 1.0) < tol) return true;
  for (std::size_t j = 0; j < v.cols(); ++j) {
    if (j == i) continue;
    double g = 0.0;
    for (std::size_t r = 0; r < v.rows(); ++r) g += v(r, i) * v(r, j);
    if (std::abs(g) < tol) return true;
  }
  return false;
}

Outcome criterion1() {
  const auto t0 = Clock::now();
  const LossConfig cfg;
  const double h = 1e-4, kink_tol = 1e-3;
  Rng rng(101);
  double worst = 0.0;
  std::size_t checked = 0, excluded = 0;
  for (int inst = 0; inst < 50; ++inst) {
    Matrix x = random_matrix(8, 6, rng, 0.4), y = random_matrix(8, 6, rng, 0.4);
    const CcaResult base = cca_loss(x, y, cfg);
    for (int view = 0; view < 2; ++view) {
      Matrix& v = view == 0 ? x : y;
      const Matrix& grad = view == 0 ? base.grad_x : base.grad_y;
      for (std::size_t r = 0; r < 8; ++r)
        for (std::size_t i = 0; i < 6; ++i) {
          if (near_kink(v, i, kink_tol)) {
            ++excluded;
            continue;
          }
          const double keep = v(r, i);
          v(r, i) = keep + h;
          const double fp = cca_loss(x, y, cfg).value;
          v(r, i) = keep - h;
          const double fm = cca_loss(x, y, cfg).value;
          v(r, i) = keep;
          const double numeric = (fp - fm) / (2.0 * h);
          const double rel = std::abs(numeric - grad(r, i)) / std::max({std::abs(numeric), std::abs(grad(r, i)), 1e-8});
          worst = std::max(worst, rel);
          ++checked;
        }
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && checked > 0 && secs < 60.0,
          fmt("max relative error %.3g over %zu coordinates (%zu near kinks excluded), %.2f s", worst, checked,
              excluded, secs)};
}

// ---------------------------------------------------------------- 2

Outcome criterion2() {
  const auto t0 = Clock::now();
  const std::size_t m = 64, k = 8;
  const LossConfig cfg;
  Rng rng(202);
  Matrix x = random_matrix(m, k, rng, 0.5), y = random_matrix(m, k, rng, 0.5);
  const auto& kt = kernels::active_kernels();
  Matrix mx(m, k), vx(m, k), my(m, k), vy(m, k);
  const double b1 = 0.9, b2 = 0.999;
  const int steps = 2000;
  for (int t = 1; t <= steps; ++t) {
    const CcaResult res = cca_loss(x, y, cfg);
    // Linear decay to 10% of the starting rate damps the subgradient chatter.
    const double lr = 0.02 * (1.0 - 0.9 * static_cast<double>(t - 1) / steps);
    const kernels::AdamArgs a{lr, b1, b2, 1e-8, 1.0 - std::pow(b1, t), 1.0 - std::pow(b2, t)};
    kt.adam(x.size(), a, res.grad_x.data(), mx.data(), vx.data(), x.data());
    kt.adam(y.size(), a, res.grad_y.data(), my.data(), vy.data(), y.data());
  }
  const CcaResult fin = cca_loss(x, y, cfg);
  double max_mean = 0.0, min_sq = 1e9, max_sq = 0.0, max_off = 0.0, min_corr = 1.0;
  for (const Matrix* v : {&x, &y}) {
    for (std::size_t i = 0; i < k; ++i) {
      double s = 0.0, sq = 0.0;
      for (std::size_t r = 0; r < m; ++r) s += (*v)(r, i), sq += (*v)(r, i) * (*v)(r, i);
      max_mean = std::max(max_mean, std::abs(s / m));
      min_sq = std::min(min_sq, sq);
      max_sq = std::max(max_sq, sq);
      for (std::size_t j = i + 1; j < k; ++j) {
        double g = 0.0;
        for (std::size_t r = 0; r < m; ++r) g += (*v)(r, i) * (*v)(r, j);
        max_off = std::max(max_off, std::abs(g));
      }
    }
  }
  for (std::size_t i = 0; i < k; ++i) min_corr = std::min(min_corr, pearson(x, i, y, i));
  const double secs = seconds_since(t0);
  const bool ok = max_mean < 0.05 && min_sq >= 0.9 && max_sq <= 1.1 && max_off < 0.1 && min_corr > 0.95 &&
                  secs < 120.0;
  return {ok, fmt("loss %.4f, max |mean| %.4f, sum sq in [%.4f, %.4f], max offdiag gram %.4f, min pair corr "
                  "%.5f, %.2f s",
                  fin.value, max_mean, min_sq, max_sq, max_off, min_corr, secs)};
}

// ---------------------------------------------------------------- 3

Outcome criterion3() {
  Rng rng(303);
  double worst = 0.0;
  for (int t = 0; t < 20; ++t) {
    const Matrix x = random_matrix(16, 5, rng, 1.0);
    LossConfig cfg;
    cfg.lambda1 = cfg.lambda2 = cfg.lambda3 = 0.0;
    worst = std::max(worst, std::abs(cca_loss(x, x, cfg).value));
  }
  // Full loss on centred, orthonormal columns: every penalty vanishes too.
  double worst_full = 0.0;
  for (int t = 0; t < 20; ++t) {
    Matrix x = random_matrix(16, 5, rng, 1.0);
    std::vector<std::vector<double>> basis{std::vector<double>(16, 0.25)};
    for (std::size_t i = 0; i < 5; ++i) {
      std::vector<double> c(16);
      for (std::size_t r = 0; r < 16; ++r) c[r] = x(r, i);
      for (const auto& b : basis) {
        double d = 0.0;
        for (std::size_t r = 0; r < 16; ++r) d += c[r] * b[r];
        for (std::size_t r = 0; r < 16; ++r) c[r] -= d * b[r];
      }
      double n = 0.0;
      for (double v : c) n += v * v;
      for (double& v : c) v /= std::sqrt(n);
      for (std::size_t r = 0; r < 16; ++r) x(r, i) = c[r];
      basis.push_back(c);
    }
    worst_full = std::max(worst_full, std::abs(cca_loss(x, x, LossConfig{}).value));
  }
  UncorrelatedPosterior p{Matrix(4, 3, 0.0), Matrix(4, 3, 1.0)};
  const double kl_min = kl_loss(p).value / static_cast<double>(p.mu.size());
  // Any perturbation away from (0, 1) must increase the per-element value.
  bool is_min = true;
  for (double dmu : {-1e-3, 0.0, 1e-3})
    for (double ds : {-1e-3, 0.0, 1e-3}) {
      if (dmu == 0.0 && ds == 0.0) continue;
      UncorrelatedPosterior q{Matrix(1, 1, dmu), Matrix(1, 1, 1.0 + ds)};
      if (!(kl_loss(q).value > 1.0)) is_min = false;
    }
  return {worst <= 1e-10 && worst_full <= 1e-10 && std::abs(kl_min - 1.0) <= 1e-12 && is_min,
          fmt("max |cca_loss(X, X)| %.3g for random X without penalties, %.3g with penalties on whitened X; KL per "
              "element at (0, 1) = %.15g, local minimum %s",
              worst, worst_full, kl_min, is_min ? "yes" : "no")};
}

// ---------------------------------------------------------------- 4

Outcome criterion4() {
  const auto t0 = Clock::now();
  const std::size_t V = 4, L = 3;
  int agree = 0;
  Rng rng(404);
  for (int trial = 0; trial < 100; ++trial) {
    // Log-probabilities keyed by prefix.
    std::map<TokenSeq, std::vector<double>> table;
    auto dist = [&](const TokenSeq& prefix) -> const std::vector<double>& {
      auto it = table.find(prefix);
      if (it != table.end()) return it->second;
      std::vector<double> lg(V);
      double mx = -1e300, z = 0.0;
      for (auto& v : lg) v = 2.0 * rng.normal(), mx = std::max(mx, v);
      for (double v : lg) z += std::exp(v - mx);
      for (auto& v : lg) v -= mx + std::log(z);
      return table.emplace(prefix, lg).first->second;
    };
    auto step = [&](const TokenSeq& state, TokenId tok) {
      TokenSeq next = state;
      if (tok >= 0) next.push_back(tok);
      return StepResult<TokenSeq>{dist(next), next};
    };
    BeamOptions opts;
    opts.width = 64;
    opts.max_length = L;
    opts.alpha = 0.0;
    const Hypothesis beam = beam_search<TokenSeq>(step, TokenSeq{}, -1, opts);

    double best = -1e300;
    TokenSeq arg;
    for (std::size_t a = 0; a < V; ++a)
      for (std::size_t b = 0; b < V; ++b)
        for (std::size_t c = 0; c < V; ++c) {
          const TokenSeq s{TokenId(a), TokenId(b), TokenId(c)};
          const double lp = dist({})[a] + dist({s[0]})[b] + dist({s[0], s[1]})[c];
          if (lp > best) best = lp, arg = s;
        }
    if (beam.tokens == arg && std::abs(beam.log_prob - best) < 1e-12) ++agree;
  }
  const double secs = seconds_since(t0);
  return {agree == 100 && secs < 10.0, fmt("%d/100 trials equal the exhaustive argmax, %.3f s", agree, secs)};
}

// ---------------------------------------------------------------- 5

Outcome criterion5() {
  const double b1 = bleu_n({{"the", "cat"}}, {{"the", "cat", "sat"}}, 1);
  const double d1 = distinct_n({{"a", "a", "b", "b"}}, 1);
  const double ui = ui_score(parse_annotations("r1\ta1\t3\t3\nr1\ta2\t3\t3\nr2\ta1\t3\t3\n"));
  EmbeddingTable emb(3);
  emb.add("good", {1.0, 2.0, 0.5});
  emb.add("day", {-0.3, 0.1, 4.0});
  const auto sim = embedding_pair_similarity({"good", "day"}, {"good", "day"}, emb);
  const bool ok = std::abs(b1 - 0.6065) <= 1e-3 && d1 == 0.5 && ui == 9.0 && sim && std::abs(*sim - 1.0) <= 1e-9;
  return {ok, fmt("BLEU-1 %.6f, dist-1 %.6f, UI %.6f, similarity %.12f", b1, d1, ui, sim ? *sim : -1.0)};
}

// ---------------------------------------------------------------- toy runs (6, 7, 8)

struct ToyCorpus {
  SynthCorpus corpus;
  TrainData data;
};

const ToyCorpus& toy_corpus() {
  static const ToyCorpus tc = [] {
    ToyCorpus t;
    t.corpus = generate_corpus(TemplateSpec{});
    t.data.vocab = build_vocab(t.corpus.train, 1);
    t.data.train = tokenize_pairs(t.corpus.train, t.data.vocab);
    t.data.validation = dedup_filter(t.data.train, tokenize_pairs(t.corpus.test, t.data.vocab));
    return t;
  }();
  return tc;
}

struct ToyRun {
  TrainResult result;
  LossBreakdown final_train;
  double seconds = 0.0;
};

ToyRun toy_run(std::uint64_t seed, bool no_uncorrelated, bool no_denoising) {
  const ToyCorpus& tc = toy_corpus();
  RunConfig rc = RunConfig::from_preset("toy");
  rc.train.seed = seed;
  rc.train.no_uncorrelated = no_uncorrelated;
  rc.train.no_denoising = no_denoising;
  ModelConfig mc = rc.model;
  mc.vocab_size = tc.data.vocab.size();
  const auto t0 = Clock::now();
  ToyRun run;
  run.result = train(tc.data, mc, rc.train, TrainOptions{});
  run.seconds = seconds_since(t0);
  run.final_train = evaluate(run.result.state.model, tc.data.train, rc.train);
  return run;
}

std::map<std::string, ToyRun>& toy_cache() {
  static std::map<std::string, ToyRun> cache;
  return cache;
}

const ToyRun& cached_toy(std::uint64_t seed, bool no_unc, bool no_den) {
  const std::string key = fmt("%llu/%d/%d", static_cast<unsigned long long>(seed), no_unc, no_den);
  auto& c = toy_cache();
  auto it = c.find(key);
  if (it == c.end()) it = c.emplace(key, toy_run(seed, no_unc, no_den)).first;
  return it->second;
}

Outcome criterion6() {
  const ToyCorpus& tc = toy_corpus();
  const RunConfig rc = RunConfig::from_preset("toy");
  ModelConfig mc = rc.model;
  mc.vocab_size = tc.data.vocab.size();
  const DialogueModel untrained(mc, rc.train.seed);
  const PairingReport before = pairing_test(untrained, tc.data.validation, 1000, 7);

  const ToyRun& run = cached_toy(1, false, false);
  const DialogueModel& m = run.result.state.model;
  const PairingReport after = pairing_test(m, tc.data.validation, 1000, 7);
  const SeparationReport sep =
      generic_separation(m, tc.corpus.groups(tc.data.vocab), tc.corpus.generic_sequences(tc.data.vocab));
  const ReconstructionReport rec = reconstruction_rate(m, tc.data.train);
  const std::size_t epochs = run.result.epochs.size();
  const bool ok = tc.data.vocab.size() <= 300 && epochs >= 5 && run.seconds < 600.0 &&
                  after.matched_closer_rate > 0.9 && sep.rate >= 0.8 && rec.rate >= 0.9;
  return {ok, fmt("vocab %zu, %zu pairs, %zu epochs in %.1f s; pairing %.3f (untrained %.3f); generic separation "
                  "%.3f; exact reconstruction %.3f",
                  tc.data.vocab.size(), tc.data.train.size(), epochs, run.seconds, after.matched_closer_rate,
                  before.matched_closer_rate, sep.rate, rec.rate)};
}

// Trailing moving average over a window of 5% of the run.
std::vector<double> smooth(const std::vector<double>& v) {
  const std::size_t w = std::max<std::size_t>(1, v.size() / 20);
  std::vector<double> out(v.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    acc += v[i];
    if (i >= w) acc -= v[i - w];
    out[i] = acc / static_cast<double>(std::min(i + 1, w));
  }
  return out;
}

Outcome criterion7() {
  const ToyRun& run = cached_toy(1, false, false);
  const auto s = smooth(run.result.state.ratio_history);
  if (s.size() < 20) return {false, "too few steps"};
  const double early = s[s.size() / 10], late = s.back();
  return {late > early, fmt("smoothed L_v/L_a at 10%% of training %.2f, at the end %.2f (%zu steps)", early, late,
                            s.size())};
}

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

double generated_bigram_rate(const DialogueModel& model) {
  const ToyCorpus& tc = toy_corpus();
  GenerationOptions g = RunConfig::from_preset("toy").generate;
  std::vector<Sentence> hyps, corpus;
  for (const auto& p : tc.data.train) corpus.push_back(tc.data.vocab.decode(p.response));
  std::set<TokenSeq> prompts;
  for (const auto& p : tc.data.validation) prompts.insert(p.prompt);
  for (const auto& p : prompts) hyps.push_back(tc.data.vocab.decode(generate(model, p, g).tokens));
  return out_of_corpus_bigram_rate(hyps, corpus);
}

Outcome criterion8() {
  std::vector<double> lc_with, la_with, lc_without, la_without, oov_den, oov_noden;
  std::string per_seed;
  for (std::uint64_t seed : {1, 2, 3}) {
    const ToyRun& a = cached_toy(seed, false, false);
    const ToyRun& b = cached_toy(seed, true, false);
    const ToyRun& c = cached_toy(seed, false, true);
    lc_with.push_back(a.final_train.cca);
    la_with.push_back(a.final_train.reconstruction);
    lc_without.push_back(b.final_train.cca);
    la_without.push_back(b.final_train.reconstruction);
    oov_den.push_back(generated_bigram_rate(a.result.state.model));
    oov_noden.push_back(generated_bigram_rate(c.result.state.model));
    per_seed += fmt(" [seed %llu: L_c %.2f/%.2f L_a %.4f/%.4f bigram %.4f/%.4f]",
                    static_cast<unsigned long long>(seed), lc_with.back(), lc_without.back(), la_with.back(),
                    la_without.back(), oov_den.back(), oov_noden.back());
  }
  const double lcw = median3(lc_with), lco = median3(lc_without), law = median3(la_with),
               lao = median3(la_without), od = median3(oov_den), on = median3(oov_noden);
  const bool channel_ok = lcw <= lco && law <= lao;
  const bool denoise_ok = on > od;
  return {channel_ok && denoise_ok,
          fmt("median L_c with/without uncorrelated channel %.2f/%.2f, L_a %.4f/%.4f (%s); out-of-corpus bigram rate "
              "denoised/no-denoising %.4f/%.4f (%s);",
              lcw, lco, law, lao, channel_ok ? "ok" : "not met", od, on, denoise_ok ? "ok" : "not met") +
              per_seed};
}

// ---------------------------------------------------------------- 9

std::vector<std::uint64_t> trace_bits(const std::vector<StepRecord>& steps) {
  std::vector<std::uint64_t> out;
  for (const auto& s : steps)
    for (double v : {s.losses.cca, s.losses.reconstruction, s.losses.kl, s.losses.total, s.grad_norm}) {
      std::uint64_t b;
      std::memcpy(&b, &v, sizeof b);
      out.push_back(b);
    }
  return out;
}

Outcome criterion9() {
  const ToyCorpus& tc = toy_corpus();
  RunConfig rc = RunConfig::from_preset("toy");
  rc.train.max_steps = 60;
  rc.train.seed = 9;
  ModelConfig mc = rc.model;
  mc.vocab_size = tc.data.vocab.size();
  const auto a = train(tc.data, mc, rc.train, TrainOptions{});
  const auto b = train(tc.data, mc, rc.train, TrainOptions{});
  const bool same = trace_bits(a.steps) == trace_bits(b.steps) && a.steps.size() == 60;

  TrainOptions pause;
  pause.stop_after_step = 30;
  const auto first = train(tc.data, mc, rc.train, pause);
  const auto dir = std::filesystem::temp_directory_path() / fmt("latentdial_accept_%d", static_cast<int>(::getpid()));
  std::filesystem::create_directories(dir);
  save_checkpoint(dir / "half.ckpt", checkpoint_state(first.state, tc.data.vocab, rc.train, {}));
  TrainState restored = restore_state(load_checkpoint(dir / "half.ckpt"));
  std::filesystem::remove_all(dir);
  const auto second = train(tc.data, mc, rc.train, TrainOptions{}, std::move(restored));
  std::vector<StepRecord> joined = first.steps;
  joined.insert(joined.end(), second.steps.begin(), second.steps.end());
  const bool resumed = trace_bits(joined) == trace_bits(a.steps);
  return {same && resumed, fmt("repeat run bit-identical: %s; resume at step 30 of 60 bit-identical: %s",
                               same ? "yes" : "no", resumed ? "yes" : "no")};
}

// ---------------------------------------------------------------- 10

Outcome criterion10() {
  const auto t0 = Clock::now();
  const ToyCorpus& tc = toy_corpus();
  RunConfig rc = RunConfig::from_preset("full");
  rc.train.max_steps = 100;
  ModelConfig mc = rc.model;
  mc.vocab_size = tc.data.vocab.size();
  std::ostringstream log;
  TrainOptions opts;
  opts.log = &log;
  std::size_t steps = 0;
  bool finite = true;
  std::string failure;
  try {
    const auto r = train(tc.data, mc, rc.train, opts);
    steps = r.steps.size();
    for (const auto& s : r.steps)
      for (double v : {s.losses.cca, s.losses.reconstruction, s.losses.kl, s.losses.total, s.grad_norm})
        if (!std::isfinite(v)) finite = false;
  } catch (const std::exception& e) {
    finite = false;
    failure = e.what();
  }
  std::istringstream in(log.str());
  std::string line;
  std::size_t complete = 0;
  const std::vector<std::string> required = {"L_c", "L_a", "L_v", "total", "ratio", "grad_norm",
                                             "component_grad_norm", "diag"};
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    bool ok = true;
    for (const auto& k : required) ok = ok && j.contains(k);
    for (const char* d : {"x_max_abs_mean", "y_max_abs_mean", "x_max_var_dev", "y_max_var_dev",
                          "x_max_offdiag_gram", "y_max_offdiag_gram", "mean_pair_corr"})
      ok = ok && j.contains("diag") && j["diag"].contains(d);
    complete += ok;
  }
  return {finite && steps == 100 && complete == 100,
          fmt("k=%zu k_u=%zu, lr %g, batch %zu: %zu steps, all finite: %s, complete log records %zu, %.1f s %s",
              mc.k_correlated, mc.k_uncorrelated, rc.train.adam.lr, rc.train.batch_size, steps,
              finite ? "yes" : "no", complete, seconds_since(t0), failure.c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"CCA loss gradient matches central differences", criterion1},
      {"free-matrix CCA minimisation satisfies the constraints", criterion2},
      {"loss identities: cca_loss(X, X) = 0 and KL minimum 1 per element", criterion3},
      {"wide beam search equals exhaustive argmax", criterion4},
      {"metric golden values", criterion5},
      {"toy run: pairing, generic separation, reconstruction", criterion6},
      {"L_v / L_a ratio grows over training", criterion7},
      {"ablations: uncorrelated channel and denoising", criterion8},
      {"determinism and bit-identical resume", criterion9},
      {"full-scale dry run stays finite with diagnostics", criterion10},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("criterion %2d %s: %s -- %s\n", id, o.pass ? "PASS" : "FAIL", criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed ? 1 : 0;
}
