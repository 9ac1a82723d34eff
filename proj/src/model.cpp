#include "latentdial/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "latentdial/rng.hpp"

namespace latentdial {

std::string to_string(ModelKind kind) { return kind == ModelKind::Latent ? "latent" : "baseline"; }

ModelKind model_kind_from_string(const std::string& s) {
  if (s == "latent") return ModelKind::Latent;
  if (s == "baseline") return ModelKind::Baseline;
  throw std::invalid_argument("unknown model kind: " + s + " (expected latent|baseline)");
}

std::string to_string(RPolicy p) { return p == RPolicy::Zeros ? "zeros" : "sample"; }

RPolicy r_policy_from_string(const std::string& s) {
  if (s == "zeros") return RPolicy::Zeros;
  if (s == "sample") return RPolicy::Sample;
  throw std::invalid_argument("unknown r policy: " + s + " (expected zeros|sample)");
}

std::string to_string(Component c) {
  switch (c) {
    case Component::Embedding: return "embedding";
    case Component::PromptEncoder: return "prompt_encoder";
    case Component::ResponseEncoder: return "response_encoder";
    case Component::Decoder: return "decoder";
  }
  return "?";
}

void ModelConfig::validate() const {
  if (vocab_size <= kNumReserved) throw std::invalid_argument("vocab_size must exceed the reserved tokens");
  if (embedding_dim == 0) throw std::invalid_argument("embedding_dim must be >= 1");
  if (k_correlated == 0) throw std::invalid_argument("k_correlated must be >= 1");
  if (encoder_layers != 1 || decoder_layers != 1)
    throw std::invalid_argument("only single-layer recurrent encoders/decoders are supported");
  if (kind == ModelKind::Baseline) {
    if (k_uncorrelated != 0) throw std::invalid_argument("baseline has no uncorrelated channel");
    if (!attention || attention_bottleneck_dim != 0)
      throw std::invalid_argument("baseline uses full-bandwidth attention");
  } else if (attention && attention_bottleneck_dim == 0) {
    throw std::invalid_argument("latent model attention requires a bottleneck");
  } else if (attention && attention_bottleneck_dim >= k_correlated) {
    throw std::invalid_argument("attention bottleneck must be much narrower than k_correlated");
  }
}

ModelConfig ModelConfig::full_latent(std::size_t vocab_size) {
  ModelConfig c;
  c.vocab_size = vocab_size;
  return c;
}

ModelConfig ModelConfig::baseline(std::size_t vocab_size) {
  ModelConfig c;
  c.kind = ModelKind::Baseline;
  c.vocab_size = vocab_size;
  c.k_correlated = 522;
  c.k_uncorrelated = 0;
  c.decoder_hidden = 522;
  c.attention = true;
  c.attention_bottleneck_dim = 0;
  return c;
}

// ------------------------------------------------------------------ helpers

std::vector<TokenId> to_time_major(const std::vector<TokenId>& row_major, std::size_t m,
                                   std::size_t width) {
  std::vector<TokenId> out(m * width);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t t = 0; t < width; ++t) out[t * m + i] = row_major[i * width + t];
  return out;
}

std::vector<std::uint8_t> time_major_mask(const std::vector<std::size_t>& lengths, std::size_t width) {
  const std::size_t m = lengths.size();
  std::vector<std::uint8_t> mask(m * width);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t t = 0; t < width; ++t) mask[t * m + i] = t < lengths[i];
  return mask;
}

Matrix concat_cols(const Matrix& a, const Matrix& b) {
  if (b.cols() == 0) return a;
  require_shape(a.rows() == b.rows(), "concat_cols rows");
  Matrix out(a.rows(), a.cols() + b.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    std::copy_n(a.row(r), a.cols(), out.row(r));
    std::copy_n(b.row(r), b.cols(), out.row(r) + a.cols());
  }
  return out;
}

namespace {

Matrix slice_cols(const Matrix& src, std::size_t begin, std::size_t count) {
  Matrix out(src.rows(), count);
  for (std::size_t r = 0; r < src.rows(); ++r) std::copy_n(src.row(r) + begin, count, out.row(r));
  return out;
}

void check_sequences(const SequenceBatch& s) {
  if (s.m == 0) throw std::invalid_argument("empty batch");
  require_shape(s.ids.size() == s.m * s.width && s.lengths.size() == s.m, "sequence batch layout");
  for (auto len : s.lengths) {
    if (len == 0) throw std::invalid_argument("cannot encode an empty sequence");
    if (len > s.width) throw std::invalid_argument("sequence length exceeds padded width");
  }
}

}  // namespace

SequenceBatch SequenceBatch::prompts_of(const Batch& b) {
  return {b.m, b.prompt_width, b.prompts, b.prompt_lengths};
}

SequenceBatch SequenceBatch::responses_of(const Batch& b, bool noised) {
  return {b.m, b.response_width, noised ? b.noised_responses : b.responses, b.response_lengths};
}

SequenceBatch SequenceBatch::from_sequences(const std::vector<TokenSeq>& seqs) {
  SequenceBatch s;
  s.m = seqs.size();
  for (const auto& q : seqs) s.width = std::max(s.width, q.size());
  s.ids.assign(s.m * s.width, kPadId);
  for (std::size_t i = 0; i < s.m; ++i) {
    std::copy(seqs[i].begin(), seqs[i].end(), s.ids.begin() + static_cast<std::ptrdiff_t>(i * s.width));
    s.lengths.push_back(seqs[i].size());
  }
  return s;
}

// ------------------------------------------------------------------ model

DialogueModel::DialogueModel(const ModelConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t v = cfg_.vocab_size;
  const std::size_t e = cfg_.embedding_dim;
  const std::size_t k = cfg_.k_correlated;
  const std::size_t latent = cfg_.latent_dim();
  const std::size_t hd = cfg_.decoder_width();

  embedding_ = Embedding("embedding", v, e);
  prompt_encoder_ = Gru("prompt_encoder", e, k);
  if (cfg_.kind == ModelKind::Latent) {
    response_encoder_ = Gru("response_encoder", e, latent);
    if (cfg_.k_uncorrelated) logvar_head_ = Linear("response_encoder.logvar", latent, cfg_.k_uncorrelated);
  }
  decoder_init_ = Linear("decoder.init", latent, hd);
  decoder_ = Gru("decoder.gru", e, hd, latent);
  if (cfg_.attention) {
    attention_ = BilinearAttention("decoder.attention", hd, k);
    if (cfg_.attention_bottleneck_dim)
      bottleneck_ = Linear("decoder.bottleneck", k, cfg_.attention_bottleneck_dim);
  }
  output_ = Linear("decoder.output", hd + cfg_.attention_width(), v);

  Rng rng(derive_seed(init_seed, "init"));
  for (Param* p : params()) p->init_uniform(rng, cfg_.init_scale);
}

std::vector<std::pair<Component, Param*>> DialogueModel::params_by_component() {
  std::vector<std::pair<Component, Param*>> out;
  auto add = [&](Component c, auto& layer) {
    ParamRefs refs;
    layer.collect(refs);
    for (Param* p : refs) out.emplace_back(c, p);
  };
  add(Component::Embedding, embedding_);
  add(Component::PromptEncoder, prompt_encoder_);
  if (cfg_.kind == ModelKind::Latent) {
    add(Component::ResponseEncoder, response_encoder_);
    if (cfg_.k_uncorrelated) add(Component::ResponseEncoder, logvar_head_);
  }
  add(Component::Decoder, decoder_init_);
  add(Component::Decoder, decoder_);
  if (cfg_.attention) {
    add(Component::Decoder, attention_);
    if (cfg_.attention_bottleneck_dim) add(Component::Decoder, bottleneck_);
  }
  add(Component::Decoder, output_);
  return out;
}

ParamRefs DialogueModel::params() {
  ParamRefs out;
  for (auto& [c, p] : params_by_component()) out.push_back(p);
  return out;
}

std::vector<const Param*> DialogueModel::params() const {
  auto refs = const_cast<DialogueModel*>(this)->params();
  return {refs.begin(), refs.end()};
}

void DialogueModel::zero_grad() {
  for (Param* p : params()) p->zero_grad();
}

std::size_t DialogueModel::parameter_count() const {
  std::size_t n = 0;
  for (const Param* p : params()) n += p->value.size();
  return n;
}

PromptEncoding DialogueModel::encode_prompt(const SequenceBatch& prompts) const {
  check_sequences(prompts);
  const std::size_t m = prompts.m;
  const std::size_t k = cfg_.k_correlated;
  PromptEncoding enc;
  enc.m = m;
  enc.ids_tm = to_time_major(prompts.ids, m, prompts.width);
  enc.mask = time_major_mask(prompts.lengths, prompts.width);
  embedding_.lookup(enc.ids_tm, enc.emb);
  prompt_encoder_.forward(enc.emb, m, enc.mask, Matrix(m, k), nullptr, enc.gru);
  enc.x = Matrix(m, k);
  std::copy_n(enc.gru.h.row(prompts.width * m), m * k, enc.x.data());
  if (cfg_.attention) {
    enc.memory = Matrix(prompts.width * m, k);
    std::copy_n(enc.gru.h.row(m), prompts.width * m * k, enc.memory.data());
  }
  return enc;
}

void DialogueModel::encode_prompt_backward(const PromptEncoding& enc, const Matrix& dx,
                                           const Matrix* dmemory) {
  Matrix demb;
  prompt_encoder_.backward(enc.gru, dmemory ? *dmemory : Matrix(), dx, &demb, nullptr, nullptr);
  embedding_.backward(enc.ids_tm, demb);
}

ResponseEncoding DialogueModel::encode_response(const SequenceBatch& responses, bool sample,
                                                Rng* rng) const {
  if (cfg_.kind != ModelKind::Latent) throw std::logic_error("baseline has no response encoder");
  check_sequences(responses);
  const std::size_t m = responses.m;
  const std::size_t k = cfg_.k_correlated;
  const std::size_t ku = cfg_.k_uncorrelated;
  ResponseEncoding enc;
  enc.m = m;
  enc.ids_tm = to_time_major(responses.ids, m, responses.width);
  const auto mask = time_major_mask(responses.lengths, responses.width);
  embedding_.lookup(enc.ids_tm, enc.emb);
  response_encoder_.forward(enc.emb, m, mask, Matrix(m, k + ku), nullptr, enc.gru);
  enc.final_state = Matrix(m, k + ku);
  std::copy_n(enc.gru.h.row(responses.width * m), m * (k + ku), enc.final_state.data());
  enc.y = slice_cols(enc.final_state, 0, k);
  enc.posterior.mu = slice_cols(enc.final_state, k, ku);
  enc.logvar = Matrix(m, ku);
  enc.posterior.sigma2 = Matrix(m, ku);
  enc.eps = Matrix(m, ku);
  enc.yu = enc.posterior.mu;
  if (ku) {
    logvar_head_.forward(enc.final_state, enc.logvar);
    for (std::size_t i = 0; i < enc.logvar.size(); ++i)
      enc.posterior.sigma2.data()[i] = std::exp(enc.logvar.data()[i]);
    if (sample) {
      if (!rng) throw std::invalid_argument("sampling the uncorrelated code needs an rng");
      for (std::size_t i = 0; i < enc.eps.size(); ++i) {
        enc.eps.data()[i] = rng->normal();
        enc.yu.data()[i] += std::exp(0.5 * enc.logvar.data()[i]) * enc.eps.data()[i];
      }
    }
  }
  return enc;
}

void DialogueModel::encode_response_backward(const ResponseEncoding& enc, const Matrix& dy,
                                             const Matrix& dmu, const Matrix& dlogvar) {
  const std::size_t m = enc.m;
  const std::size_t k = cfg_.k_correlated;
  const std::size_t ku = cfg_.k_uncorrelated;
  Matrix dfinal(m, k + ku);
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(dy.row(i), k, dfinal.row(i));
    if (ku) std::copy_n(dmu.row(i), ku, dfinal.row(i) + k);
  }
  if (ku) {
    Matrix dhead;
    logvar_head_.backward(enc.final_state, dlogvar, &dhead);
    for (std::size_t i = 0; i < dfinal.size(); ++i) dfinal.data()[i] += dhead.data()[i];
  }
  Matrix demb;
  response_encoder_.backward(enc.gru, Matrix(), dfinal, &demb, nullptr, nullptr);
  embedding_.backward(enc.ids_tm, demb);
}

void DialogueModel::attend(const Matrix& queries, std::size_t m, const Matrix& memory,
                           const std::vector<std::uint8_t>& mask, Matrix& attn_out) const {
  AttentionCache cache;
  attention_.forward(queries, m, memory, mask, cache);
  if (cfg_.attention_bottleneck_dim)
    bottleneck_.forward(cache.context, attn_out);
  else
    attn_out = cache.context;
}

DecoderPass DialogueModel::decode_teacher_forced(const Matrix& latent, const SequenceBatch& targets,
                                                 const PromptEncoding* memory) const {
  check_sequences(targets);
  if (latent.cols() != cfg_.latent_dim())
    throw std::invalid_argument("decoder latent width " + std::to_string(latent.cols()) +
                                " != " + std::to_string(cfg_.latent_dim()));
  require_shape(latent.rows() == targets.m, "decoder latent rows");
  if (cfg_.attention && !memory) throw std::invalid_argument("attention decoder needs prompt states");
  const std::size_t m = targets.m;
  const std::size_t steps = targets.width;
  const std::size_t hd = cfg_.decoder_width();

  DecoderPass pass;
  pass.m = m;
  pass.steps = steps;
  pass.latent = latent;
  pass.targets_tm = to_time_major(targets.ids, m, steps);
  pass.mask = time_major_mask(targets.lengths, steps);
  pass.inputs_tm.assign(m * steps, kBosId);
  for (std::size_t t = 1; t < steps; ++t)
    for (std::size_t i = 0; i < m; ++i) pass.inputs_tm[t * m + i] = pass.targets_tm[(t - 1) * m + i];

  decoder_init_.forward(latent, pass.h0);
  embedding_.lookup(pass.inputs_tm, pass.emb);
  decoder_.forward(pass.emb, m, pass.mask, pass.h0, &latent, pass.gru);
  pass.states = Matrix(steps * m, hd);
  std::copy_n(pass.gru.h.row(m), steps * m * hd, pass.states.data());

  if (cfg_.attention) {
    attention_.forward(pass.states, m, memory->memory, memory->mask, pass.attn);
    if (cfg_.attention_bottleneck_dim)
      bottleneck_.forward(pass.attn.context, pass.attn_out);
    else
      pass.attn_out = pass.attn.context;
    pass.out_in = concat_cols(pass.states, pass.attn_out);
  } else {
    pass.out_in = pass.states;
  }
  output_.forward(pass.out_in, pass.logits);
  return pass;
}

Matrix DialogueModel::decode_backward(const DecoderPass& pass, const Matrix& dlogits,
                                      const PromptEncoding* memory, Matrix* dmemory) {
  const std::size_t hd = cfg_.decoder_width();
  Matrix dout_in;
  output_.backward(pass.out_in, dlogits, &dout_in);
  Matrix dstates = slice_cols(dout_in, 0, hd);
  if (cfg_.attention) {
    Matrix dattn = slice_cols(dout_in, hd, cfg_.attention_width());
    Matrix dcontext;
    if (cfg_.attention_bottleneck_dim)
      bottleneck_.backward(pass.attn.context, dattn, &dcontext);
    else
      dcontext = std::move(dattn);
    Matrix dq;
    Matrix dmem(memory->memory.rows(), memory->memory.cols());
    attention_.backward(pass.states, pass.m, memory->memory, memory->mask, pass.attn, dcontext, dq, dmem);
    for (std::size_t i = 0; i < dstates.size(); ++i) dstates.data()[i] += dq.data()[i];
    if (dmemory) {
      if (!dmemory->same_shape(dmem)) dmemory->resize(dmem.rows(), dmem.cols());
      for (std::size_t i = 0; i < dmem.size(); ++i) dmemory->data()[i] += dmem.data()[i];
    }
  }
  Matrix demb, dh0, dcond;
  decoder_.backward(pass.gru, dstates, Matrix(), &demb, &dh0, &dcond);
  embedding_.backward(pass.inputs_tm, demb);
  Matrix dlatent;
  decoder_init_.backward(pass.latent, dh0, &dlatent);
  for (std::size_t i = 0; i < dlatent.size(); ++i) dlatent.data()[i] += dcond.data()[i];
  return dlatent;
}

Matrix DialogueModel::infer_latent(const SequenceBatch& prompts, RPolicy policy, Rng* rng) const {
  const PromptEncoding enc = encode_prompt(prompts);
  if (cfg_.kind == ModelKind::Baseline || cfg_.k_uncorrelated == 0) return enc.x;
  Matrix r(prompts.m, cfg_.k_uncorrelated);
  if (policy == RPolicy::Sample) {
    if (!rng) throw std::invalid_argument("r_policy=sample needs an rng");
    for (auto& v : r.values()) v = rng->normal();
  }
  return concat_cols(enc.x, r);
}

}  // namespace latentdial
