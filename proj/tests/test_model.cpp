#include "doctest.h"

#include "helpers.hpp"
#include "latentdial/inference.hpp"
#include "latentdial/model.hpp"
#include "latentdial/training.hpp"

using namespace latentdial;

namespace {

std::vector<TokenizedPair> tiny_pairs(std::size_t vocab, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<TokenizedPair> out;
  for (std::size_t i = 0; i < n; ++i) {
    TokenizedPair p;
    for (std::size_t t = 0, len = 1 + rng.below(4); t < len; ++t) p.prompt.push_back(4 + rng.below(vocab - 4));
    for (std::size_t t = 0, len = 1 + rng.below(4); t < len; ++t) p.response.push_back(4 + rng.below(vocab - 4));
    p.response.push_back(kEosId);
    out.push_back(p);
  }
  return out;
}

ModelConfig tiny_config(ModelKind kind, bool attention, std::size_t ku) {
  ModelConfig c;
  c.kind = kind;
  c.vocab_size = 11;
  c.embedding_dim = 4;
  c.k_correlated = 3;
  c.k_uncorrelated = ku;
  c.decoder_hidden = 5;
  c.attention = attention;
  c.attention_bottleneck_dim = kind == ModelKind::Baseline ? 0 : 2;
  c.init_scale = 0.5;
  return c;
}

// Checks every parameter coordinate (or a strided subset of large ones)
// against central differences of the training objective.
void check_model_gradients(const ModelConfig& mc, const TrainConfig& tc) {
  DialogueModel model(mc, 3);
  const auto pairs = tiny_pairs(mc.vocab_size, 5, 9);
  const Batch batch = collate(pairs, {0, 1, 2, 3, 4});
  const std::uint64_t seed = 1234;
  auto loss_at = [&] {
    Batch b = batch;
    return forward_backward(model, b, tc, seed).total;
  };
  model.zero_grad();
  {
    Batch b = batch;
    forward_backward(model, b, tc, seed);
  }
  std::vector<std::pair<std::string, Matrix>> analytic;
  for (Param* p : model.params()) analytic.emplace_back(p->name, p->grad);

  std::size_t checked = 0, skipped = 0;
  double worst = 0.0;
  std::string worst_name;
  const auto params = model.params();
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Param& p = *params[pi];
    const std::size_t stride = std::max<std::size_t>(1, p.value.size() / 25);
    for (std::size_t i = 0; i < p.value.size(); i += stride) {
      const double keep = p.value.data()[i], h = 1e-5;
      p.value.data()[i] = keep + h;
      const double fp = loss_at();
      p.value.data()[i] = keep - h;
      const double fm = loss_at();
      p.value.data()[i] = keep + 0.5 * h;
      const double fhp = loss_at();
      p.value.data()[i] = keep - 0.5 * h;
      const double fhm = loss_at();
      p.value.data()[i] = keep;
      const double num = (fp - fm) / (2 * h), num_half = (fhp - fhm) / h;
      // Disagreement between the two step sizes means an absolute-value kink lies within reach.
      if (testutil::rel_err(num, num_half, 1e-6) > 1e-4) {
        ++skipped;
        continue;
      }
      const double a = analytic[pi].second.data()[i];
      const double err = std::abs(num - a) / std::max({std::abs(num), std::abs(a), 1e-4});
      if (err > worst) worst = err, worst_name = p.name;
      ++checked;
    }
  }
  CAPTURE(worst_name);
  CAPTURE(skipped);
  CHECK(checked > 100);
  CHECK(skipped * 10 < checked);
  CHECK(worst < 1e-5);
}

}  // namespace

TEST_CASE("latent model gradients match finite differences") {
  TrainConfig tc;
  tc.loss.lambda5 = 3.0;
  tc.loss.lambda6 = 0.7;
  SUBCASE("no attention") { check_model_gradients(tiny_config(ModelKind::Latent, false, 2), tc); }
  SUBCASE("bottlenecked attention") { check_model_gradients(tiny_config(ModelKind::Latent, true, 2), tc); }
  SUBCASE("without the uncorrelated channel") { check_model_gradients(tiny_config(ModelKind::Latent, false, 0), tc); }
  SUBCASE("without denoising") {
    tc.no_denoising = true;
    check_model_gradients(tiny_config(ModelKind::Latent, true, 2), tc);
  }
}

TEST_CASE("baseline gradients match finite differences") {
  ModelConfig mc = tiny_config(ModelKind::Baseline, true, 0);
  mc.decoder_hidden = 3;
  check_model_gradients(mc, TrainConfig{});
}

TEST_CASE("step-wise decoding reproduces teacher-forced logits") {
  for (bool attention : {false, true}) {
    CAPTURE(attention);
    const ModelConfig mc = tiny_config(ModelKind::Latent, attention, 2);
    const DialogueModel model(mc, 5);
    const auto pairs = tiny_pairs(mc.vocab_size, 1, 2);
    const SequenceBatch prompts = SequenceBatch::from_sequences({pairs[0].prompt});
    const PromptEncoding enc = model.encode_prompt(prompts);
    Rng rng(1);
    const Matrix latent = model.infer_latent(prompts, RPolicy::Sample, &rng);
    const SequenceBatch target = SequenceBatch::from_sequences({pairs[0].response});
    const DecoderPass pass = model.decode_teacher_forced(latent, target, attention ? &enc : nullptr);

    DecoderStepper stepper(model, pairs[0].prompt, latent);
    Matrix h = stepper.initial_state(), next;
    TokenId prev = kBosId;
    for (std::size_t t = 0; t < pairs[0].response.size(); ++t) {
      const auto logits = stepper.logits(h, prev, next);
      for (std::size_t v = 0; v < mc.vocab_size; ++v) CHECK(logits[v] == doctest::Approx(pass.logits(t, v)).epsilon(1e-12));
      h = next;
      prev = pairs[0].response[t];
    }
  }
}

TEST_CASE("padded rows do not change the codes of other rows") {
  const ModelConfig mc = tiny_config(ModelKind::Latent, false, 2);
  const DialogueModel model(mc, 6);
  const TokenSeq a{4, 5}, b{6, 7, 8, 9, 10};
  const Matrix alone = model.encode_prompt(SequenceBatch::from_sequences({a})).x;
  const Matrix together = model.encode_prompt(SequenceBatch::from_sequences({a, b})).x;
  for (std::size_t c = 0; c < alone.cols(); ++c) CHECK(alone(0, c) == doctest::Approx(together(0, c)).epsilon(1e-14));
}

TEST_CASE("latent layout: [X ; R] with zeros policy, X alone for the baseline") {
  const ModelConfig mc = tiny_config(ModelKind::Latent, false, 2);
  const DialogueModel model(mc, 7);
  const SequenceBatch p = SequenceBatch::from_sequences({{4, 5, 6}});
  const Matrix lat = model.infer_latent(p, RPolicy::Zeros, nullptr);
  const Matrix x = model.encode_prompt(p).x;
  REQUIRE(lat.cols() == 5);
  for (std::size_t c = 0; c < 3; ++c) CHECK(lat(0, c) == x(0, c));
  CHECK(lat(0, 3) == 0.0);
  CHECK(lat(0, 4) == 0.0);
  Rng r1(3), r2(3);
  CHECK(model.infer_latent(p, RPolicy::Sample, &r1) == model.infer_latent(p, RPolicy::Sample, &r2));

  ModelConfig bc = tiny_config(ModelKind::Baseline, true, 0);
  const DialogueModel base(bc, 7);
  CHECK(base.infer_latent(p, RPolicy::Zeros, nullptr).cols() == 3);
}

TEST_CASE("model config validation and helpers") {
  ModelConfig c = ModelConfig::full_latent(100);
  CHECK(c.k_correlated == 512);
  CHECK(c.k_uncorrelated == 10);
  CHECK(c.decoder_width() == 522);
  CHECK(ModelConfig::baseline(100).decoder_width() == 522);
  CHECK(model_kind_from_string(to_string(ModelKind::Baseline)) == ModelKind::Baseline);
  CHECK_THROWS(model_kind_from_string("rnn"));
  c.vocab_size = 0;
  CHECK_THROWS(c.validate());
}

TEST_CASE("time-major helpers") {
  const std::vector<TokenId> rm{1, 2, 3, 4, 5, 6};
  CHECK(to_time_major(rm, 2, 3) == std::vector<TokenId>{1, 4, 2, 5, 3, 6});
  CHECK(time_major_mask({3, 1}, 3) == std::vector<std::uint8_t>{1, 1, 1, 0, 1, 0});
}
