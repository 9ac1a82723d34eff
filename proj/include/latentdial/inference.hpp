#pragma once

// Response generation: latent construction, beam search, nucleus sampling,
// batch generation and the interactive chat loop.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <limits>
#include <optional>
#include <stdexcept>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "latentdial/data.hpp"
#include "latentdial/model.hpp"
#include "latentdial/rng.hpp"

namespace latentdial {

enum class DecodeMode { Beam, Nucleus };

std::string to_string(DecodeMode m);
DecodeMode decode_mode_from_string(const std::string& s);

struct GenerationOptions {
  DecodeMode mode = DecodeMode::Beam;
  std::size_t beam_width = 5;
  double length_norm_alpha = 0.7;
  double nucleus_p = 0.9;
  std::size_t max_length = 30;
  RPolicy r_policy = RPolicy::Zeros;
  std::uint64_t rng_seed = 0;

  void validate() const;
  // "key=value" with keys mode, beam_width, alpha, nucleus_p, max_length, r_policy, seed.
  void set(const std::string& key, const std::string& value);
};

struct Hypothesis {
  TokenSeq tokens;  // includes the final eos when one was emitted
  double log_prob = 0.0;
  bool finished = false;   // eos emitted
  bool truncated = false;  // stopped at max_length

  double score(double alpha) const {
    const double len = std::max<std::size_t>(tokens.size(), 1);
    return alpha == 0.0 ? log_prob : log_prob / std::pow(len, alpha);
  }
};

struct BeamOptions {
  std::size_t width = 5;
  double alpha = 0.7;
  std::size_t max_length = 30;
  std::optional<TokenId> eos;  // absent: every hypothesis runs to max_length
  bool greedy_floor = true;
};

template <class State>
struct StepResult {
  std::vector<double> log_probs;
  State next;
};

namespace detail {

template <class State, class StepFn>
Hypothesis standard_beam(StepFn& step, const State& init, TokenId start_token, const BeamOptions& opts) {
  struct Live {
    Hypothesis hyp;
    State state;
    TokenId prev;
  };
  struct Cand {
    double lp;
    TokenId tok;
    std::size_t beam;
  };
  std::vector<Hypothesis> finished;
  std::vector<Live> beams;
  beams.push_back({Hypothesis{}, init, start_token});

  for (std::size_t t = 0; t < opts.max_length && !beams.empty(); ++t) {
    std::vector<Cand> cands;
    std::vector<State> next_states;
    next_states.reserve(beams.size());
    for (std::size_t b = 0; b < beams.size(); ++b) {
      StepResult<State> r = step(beams[b].state, beams[b].prev);
      for (std::size_t v = 0; v < r.log_probs.size(); ++v) {
        const double lp = r.log_probs[v];
        if (lp == -std::numeric_limits<double>::infinity()) continue;
        cands.push_back({beams[b].hyp.log_prob + lp, static_cast<TokenId>(v), b});
      }
      next_states.push_back(std::move(r.next));
    }
    const std::size_t keep = std::min(opts.width, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                      [](const Cand& a, const Cand& b) {
                        if (a.lp != b.lp) return a.lp > b.lp;
                        if (a.tok != b.tok) return a.tok < b.tok;
                        return a.beam < b.beam;
                      });
    std::vector<Live> next;
    for (std::size_t c = 0; c < keep; ++c) {
      const Cand& cd = cands[c];
      Hypothesis h = beams[cd.beam].hyp;
      h.tokens.push_back(cd.tok);
      h.log_prob = cd.lp;
      if (opts.eos && cd.tok == *opts.eos) {
        h.finished = true;
        finished.push_back(std::move(h));
      } else {
        next.push_back({std::move(h), next_states[cd.beam], cd.tok});
      }
    }
    beams = std::move(next);
  }
  for (auto& l : beams) {
    l.hyp.truncated = true;
    finished.push_back(std::move(l.hyp));
  }
  if (finished.empty()) throw std::runtime_error("beam search: every continuation has zero probability");
  std::size_t best = 0;
  for (std::size_t i = 1; i < finished.size(); ++i)
    if (finished[i].score(opts.alpha) > finished[best].score(opts.alpha)) best = i;
  return finished[best];
}

}  // namespace detail

// step(state, prev_token) -> StepResult<State>. Expansion keeps the top
// `width` candidates by cumulative log-prob (ties: lower token id, then lower
// beam index); candidates ending in eos leave the beam. Survivors at
// max_length are finished as truncated. Final ranking is log_prob / len^alpha.
// With greedy_floor the greedy rollout also competes in the final ranking.
template <class State, class StepFn>
Hypothesis beam_search(StepFn&& step, const State& init, TokenId start_token, const BeamOptions& opts) {
  if (opts.width < 1) throw std::invalid_argument("beam width must be >= 1");
  if (opts.max_length < 1) throw std::invalid_argument("max_length must be >= 1");
  Hypothesis best = detail::standard_beam<State>(step, init, start_token, opts);
  if (opts.greedy_floor && opts.width > 1) {
    BeamOptions g = opts;
    g.width = 1;
    Hypothesis greedy = detail::standard_beam<State>(step, init, start_token, g);
    if (greedy.score(opts.alpha) > best.score(opts.alpha)) best = std::move(greedy);
  }
  return best;
}

// Keeps the smallest probability-sorted prefix whose mass reaches p
// (ties: lower id first), renormalizes and samples from it.
TokenId nucleus_sample_step(const std::vector<double>& logits, double p, Rng& rng);

// Indices of the nucleus for the given logits, in probability order.
std::vector<TokenId> nucleus_set(const std::vector<double>& logits, double p);

// Step-wise decoder for one prompt. State is the decoder hidden vector.
class DecoderStepper {
 public:
  DecoderStepper(const DialogueModel& model, const TokenSeq& prompt, const Matrix& latent);

  const Matrix& initial_state() const { return h0_; }
  // Log-probabilities over the vocabulary with pad and bos masked out.
  StepResult<Matrix> operator()(const Matrix& h, TokenId prev) const;
  // Raw logits (no masking) and the next state.
  std::vector<double> logits(const Matrix& h, TokenId prev, Matrix& h_next) const;

 private:
  const DialogueModel* model_;
  Matrix latent_;
  Matrix h0_;
  Matrix cond_proj_;
  Matrix memory_;
  std::vector<std::uint8_t> mask_;
};

struct Generation {
  TokenSeq tokens;  // surface tokens: no pad, bos or eos
  double score = 0.0;   // log_prob / length^alpha
  double log_prob = 0.0;
  bool truncated = false;
  bool finished = false;  // eos emitted
};

// Latent for a single prompt under the chosen R policy.
Matrix prompt_latent(const DialogueModel& model, const TokenSeq& prompt, RPolicy policy, Rng& rng);

Generation generate(const DialogueModel& model, const TokenSeq& prompt, const GenerationOptions& opts);
// Decoding from an explicit latent [1 x latent_dim]; the prompt only feeds attention.
Generation decode_latent(const DialogueModel& model, const TokenSeq& prompt, const Matrix& latent,
                         const GenerationOptions& opts);
std::string generate_text(const DialogueModel& model, const Vocabulary& vocab, const std::string& prompt,
                          const GenerationOptions& opts, Generation* out = nullptr);

// One prompt per input line; writes "prompt<TAB>response<TAB>score" lines.
// Returns the number of prompts processed. Empty lines are skipped.
std::size_t generate_file(const DialogueModel& model, const Vocabulary& vocab,
                          const std::filesystem::path& input, const std::filesystem::path& output,
                          const GenerationOptions& opts, std::ostream* progress = nullptr);

// Reads prompts from `in` until end of input or ":quit". ":opts k=v ..." edits
// the options. Failed turns print an error and the session continues.
int chat_repl(const DialogueModel& model, const Vocabulary& vocab, GenerationOptions opts, std::istream& in,
              std::ostream& out);

}  // namespace latentdial
