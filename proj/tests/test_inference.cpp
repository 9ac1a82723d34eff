#include "doctest.h"

#include <algorithm>
#include <map>
#include <sstream>
#include <set>

#include "helpers.hpp"
#include "latentdial/inference.hpp"

using namespace latentdial;

namespace {

// Random next-token distributions keyed by prefix; token 0 acts as eos.
struct RandomTree {
  std::size_t vocab;
  Rng rng;
  std::map<TokenSeq, std::vector<double>> table;

  RandomTree(std::size_t v, std::uint64_t seed) : vocab(v), rng(seed) {}

  const std::vector<double>& dist(const TokenSeq& prefix) {
    auto it = table.find(prefix);
    if (it != table.end()) return it->second;
    std::vector<double> lg(vocab);
    double mx = -1e300, z = 0.0;
    for (auto& v : lg) v = 1.5 * rng.normal(), mx = std::max(mx, v);
    for (double v : lg) z += std::exp(v - mx);
    for (auto& v : lg) v -= mx + std::log(z);
    return table.emplace(prefix, lg).first->second;
  }

  auto stepper() {
    return [this](const TokenSeq& state, TokenId tok) {
      TokenSeq next = state;
      if (tok >= 0) next.push_back(tok);
      return StepResult<TokenSeq>{dist(next), next};
    };
  }
};

double seq_log_prob(RandomTree& t, const TokenSeq& s) {
  double lp = 0.0;
  TokenSeq prefix;
  for (TokenId tok : s) {
    lp += t.dist(prefix)[tok];
    prefix.push_back(tok);
  }
  return lp;
}

}  // namespace

TEST_CASE("beam hypotheses are consistent with the model") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    RandomTree tree(5, seed);
    BeamOptions o;
    o.width = 3;
    o.max_length = 6;
    o.eos = 0;
    const Hypothesis h = beam_search<TokenSeq>(tree.stepper(), TokenSeq{}, -1, o);
    CHECK(h.log_prob == doctest::Approx(seq_log_prob(tree, h.tokens)).epsilon(1e-12));
    CHECK(h.finished != h.truncated);
    if (h.finished) CHECK(h.tokens.back() == 0);
    if (h.truncated) CHECK(h.tokens.size() == 6);
    for (std::size_t i = 0; i + 1 < h.tokens.size(); ++i) CHECK(h.tokens[i] != 0);
  }
}

TEST_CASE("width one is greedy decoding") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    RandomTree tree(6, seed);
    BeamOptions o;
    o.width = 1;
    o.max_length = 5;
    o.eos = 0;
    const Hypothesis h = beam_search<TokenSeq>(tree.stepper(), TokenSeq{}, -1, o);
    TokenSeq greedy;
    for (std::size_t t = 0; t < 5; ++t) {
      const auto& d = tree.dist(greedy);
      const TokenId best = static_cast<TokenId>(std::max_element(d.begin(), d.end()) - d.begin());
      greedy.push_back(best);
      if (best == 0) break;
    }
    CHECK(h.tokens == greedy);
  }
}

TEST_CASE("a wider beam never scores below greedy") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    RandomTree tree(4, seed);
    BeamOptions o;
    o.max_length = 5;
    o.eos = 0;
    o.width = 1;
    const double g = beam_search<TokenSeq>(tree.stepper(), TokenSeq{}, -1, o).score(o.alpha);
    for (std::size_t w : {2u, 3u, 8u}) {
      o.width = w;
      CHECK(beam_search<TokenSeq>(tree.stepper(), TokenSeq{}, -1, o).score(o.alpha) >= g);
    }
  }
}

TEST_CASE("full-width beam without eos equals the exhaustive argmax") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    RandomTree tree(3, seed);
    BeamOptions o;
    o.width = 27;
    o.max_length = 3;
    o.alpha = 0.0;
    const Hypothesis h = beam_search<TokenSeq>(tree.stepper(), TokenSeq{}, -1, o);
    double best = -1e300;
    TokenSeq arg;
    for (TokenId a = 0; a < 3; ++a)
      for (TokenId b = 0; b < 3; ++b)
        for (TokenId c = 0; c < 3; ++c) {
          const double lp = seq_log_prob(tree, {a, b, c});
          if (lp > best) best = lp, arg = {a, b, c};
        }
    CHECK(h.tokens == arg);
  }
}

TEST_CASE("beam ties resolve to the lower token id") {
  auto flat = [](const int&, TokenId) { return StepResult<int>{std::vector<double>(4, std::log(0.25)), 0}; };
  BeamOptions o;
  o.width = 2;
  o.max_length = 3;
  const Hypothesis h = beam_search<int>(flat, 0, -1, o);
  CHECK(h.tokens == TokenSeq{0, 0, 0});
  o.width = 0;
  CHECK_THROWS_AS(beam_search<int>(flat, 0, -1, o), std::invalid_argument);
}

TEST_CASE("length normalisation") {
  Hypothesis h{{1, 2, 3, 4}, -4.0, true, false};
  CHECK(h.score(0.0) == -4.0);
  CHECK(h.score(1.0) == -1.0);
  CHECK(h.score(0.5) == doctest::Approx(-2.0));
}

TEST_CASE("nucleus set is the smallest prefix reaching p") {
  const std::vector<double> logits{std::log(0.5), std::log(0.3), std::log(0.15), std::log(0.05)};
  CHECK(nucleus_set(logits, 0.5) == std::vector<TokenId>{0});
  CHECK(nucleus_set(logits, 0.7) == std::vector<TokenId>{0, 1});
  CHECK(nucleus_set(logits, 0.9) == std::vector<TokenId>{0, 1, 2});
  CHECK(nucleus_set(logits, 1.0).size() == 4);
  CHECK_THROWS_AS(nucleus_set(logits, 0.0), std::invalid_argument);
  const double ninf = -std::numeric_limits<double>::infinity();
  CHECK(nucleus_set({0.0, ninf, 0.0}, 1.0) == std::vector<TokenId>{0, 2});
}

TEST_CASE("nucleus sampling stays inside the nucleus with renormalised frequencies") {
  const std::vector<double> logits{std::log(0.5), std::log(0.3), std::log(0.15), std::log(0.05)};
  Rng rng(3);
  std::map<TokenId, int> counts;
  const int n = 40000;
  for (int i = 0; i < n; ++i) ++counts[nucleus_sample_step(logits, 0.7, rng)];
  CHECK(counts.size() == 2);
  CHECK(counts[0] / double(n) == doctest::Approx(0.625).epsilon(0.03));
  Rng a(9), b(9);
  for (int i = 0; i < 50; ++i) CHECK(nucleus_sample_step(logits, 0.9, a) == nucleus_sample_step(logits, 0.9, b));
}

TEST_CASE("generation options parse key=value and validate") {
  GenerationOptions g;
  g.set("mode", "nucleus");
  g.set("p", "0.8");
  g.set("beam_width", "7");
  CHECK(g.mode == DecodeMode::Nucleus);
  CHECK(g.nucleus_p == 0.8);
  CHECK(g.beam_width == 7);
  CHECK_THROWS(g.set("beam_width", "0"));
  CHECK(g.beam_width == 7);
  CHECK_THROWS(g.set("nucleus_p", "1.5"));
  CHECK_THROWS(g.set("colour", "red"));
  CHECK_THROWS(g.set("max_length", "abc"));
}

TEST_CASE("model decoding never emits pad or bos and honours max_length") {
  ModelConfig mc;
  mc.vocab_size = 12;
  mc.embedding_dim = 4;
  mc.k_correlated = 4;
  mc.k_uncorrelated = 2;
  mc.init_scale = 1.0;
  const DialogueModel model(mc, 4);
  for (DecodeMode mode : {DecodeMode::Beam, DecodeMode::Nucleus}) {
    GenerationOptions g;
    g.mode = mode;
    g.max_length = 4;
    g.nucleus_p = 1.0;
    for (std::uint64_t s = 0; s < 10; ++s) {
      g.rng_seed = s;
      const Generation out = generate(model, {4, 5, 6}, g);
      CHECK(out.tokens.size() <= 4);
      for (TokenId t : out.tokens) CHECK(!is_special(t));
      CHECK(out.finished != out.truncated);
      const Generation again = generate(model, {4, 5, 6}, g);
      CHECK(again.tokens == out.tokens);
    }
  }
}

TEST_CASE("chat loop: options, blank lines and quit") {
  ModelConfig mc;
  mc.vocab_size = 8;
  mc.embedding_dim = 3;
  mc.k_correlated = 3;
  mc.k_uncorrelated = 1;
  const DialogueModel model(mc, 1);
  const Vocabulary vocab({"<pad>", "<unk>", "<bos>", "<eos>", "a", "b", "c", "d"});
  std::istringstream in("a b\n\n:opts beam_width=2 max_length=3\n:opts beam_width=0\n:bogus\nc d\n:quit\na\n");
  std::ostringstream out;
  CHECK(chat_repl(model, vocab, GenerationOptions{}, in, out) == 0);
  const std::string s = out.str();
  CHECK(s.find("beam_width=2") != std::string::npos);
  CHECK(s.find("error") != std::string::npos);
  CHECK(std::count(s.begin(), s.end(), '[') == 2);
}
