#pragma once

// Encoders, decoder and latent construction for the latent-regression
// dialogue model, plus the end-to-end attention baseline that reuses the
// same decoder with a different conditioner.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "latentdial/data.hpp"
#include "latentdial/losses.hpp"
#include "latentdial/nn.hpp"

namespace latentdial {

class Rng;

enum class ModelKind { Latent, Baseline };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& s);

struct ModelConfig {
  ModelKind kind = ModelKind::Latent;
  std::size_t vocab_size = 0;
  std::size_t embedding_dim = 128;
  // Prompt-encoder hidden size. For the latent model this is also the
  // correlated code width k; for the baseline it is the encoder hidden size.
  std::size_t k_correlated = 512;
  std::size_t k_uncorrelated = 10;  // 0 disables the uncorrelated channel
  std::size_t decoder_hidden = 0;   // 0 means k_correlated + k_uncorrelated
  int encoder_layers = 1;
  int decoder_layers = 1;
  bool attention = false;
  std::size_t attention_bottleneck_dim = 10;  // 0 means full-bandwidth context
  double init_scale = 0.08;

  std::size_t latent_dim() const { return k_correlated + k_uncorrelated; }
  std::size_t decoder_width() const { return decoder_hidden ? decoder_hidden : latent_dim(); }
  std::size_t attention_width() const {
    if (!attention) return 0;
    return attention_bottleneck_dim ? attention_bottleneck_dim : k_correlated;
  }
  void validate() const;

  static ModelConfig full_latent(std::size_t vocab_size);
  static ModelConfig baseline(std::size_t vocab_size);
};

enum class RPolicy { Zeros, Sample };

std::string to_string(RPolicy p);
RPolicy r_policy_from_string(const std::string& s);

// Padded id matrix [m x width] with true lengths, row-major like Batch.
struct SequenceBatch {
  std::size_t m = 0;
  std::size_t width = 0;
  std::vector<TokenId> ids;
  std::vector<std::size_t> lengths;

  static SequenceBatch prompts_of(const Batch& b);
  static SequenceBatch responses_of(const Batch& b, bool noised);
  static SequenceBatch from_sequences(const std::vector<TokenSeq>& seqs);
};

struct PromptEncoding {
  std::size_t m = 0;
  std::vector<TokenId> ids_tm;
  Matrix emb;
  GruCache gru;
  Matrix x;                       // [m x k] final state at each true last position
  Matrix memory;                  // [T*m x k] per-step states (attention keys/values)
  std::vector<std::uint8_t> mask; // [T*m]
};

struct ResponseEncoding {
  std::size_t m = 0;
  std::vector<TokenId> ids_tm;
  Matrix emb;
  GruCache gru;
  Matrix final_state;  // [m x (k + k_u)]
  Matrix y;            // [m x k]
  UncorrelatedPosterior posterior;
  Matrix logvar;       // [m x k_u]
  Matrix eps;          // [m x k_u], zero when not sampling
  Matrix yu;           // [m x k_u]
};

struct DecoderPass {
  std::size_t m = 0;
  std::size_t steps = 0;
  Matrix latent;
  Matrix h0;
  std::vector<TokenId> inputs_tm;
  std::vector<std::int32_t> targets_tm;
  std::vector<std::uint8_t> mask;
  Matrix emb;
  GruCache gru;
  Matrix states;       // [T*m x Hd]
  AttentionCache attn;
  Matrix attn_out;     // bottlenecked (or raw) context [T*m x A]
  Matrix out_in;       // [T*m x (Hd + A)]
  Matrix logits;       // [T*m x V]
};

// Parameter groups used for per-component gradient reporting.
enum class Component { Embedding, PromptEncoder, ResponseEncoder, Decoder };
std::string to_string(Component c);

class DialogueModel {
 public:
  DialogueModel() = default;
  DialogueModel(const ModelConfig& cfg, std::uint64_t init_seed);

  const ModelConfig& config() const { return cfg_; }
  ParamRefs params();
  std::vector<const Param*> params() const;
  std::vector<std::pair<Component, Param*>> params_by_component();
  void zero_grad();
  std::size_t parameter_count() const;

  PromptEncoding encode_prompt(const SequenceBatch& prompts) const;
  void encode_prompt_backward(const PromptEncoding& enc, const Matrix& dx, const Matrix* dmemory);

  // sample=false uses the posterior mean as the uncorrelated code.
  ResponseEncoding encode_response(const SequenceBatch& responses, bool sample, Rng* rng) const;
  void encode_response_backward(const ResponseEncoding& enc, const Matrix& dy, const Matrix& dmu,
                                const Matrix& dlogvar);

  // latent: [m x latent_dim]; targets: eos-terminated responses. Inputs are
  // bos followed by the gold prefix.
  DecoderPass decode_teacher_forced(const Matrix& latent, const SequenceBatch& targets,
                                    const PromptEncoding* memory) const;
  // Returns dlatent; accumulates into *dmemory (same shape as memory) when attention is on.
  Matrix decode_backward(const DecoderPass& pass, const Matrix& dlogits, const PromptEncoding* memory,
                         Matrix* dmemory);

  // Attention step for arbitrary queries over one encoded prompt batch.
  void attend(const Matrix& queries, std::size_t m, const Matrix& memory,
              const std::vector<std::uint8_t>& mask, Matrix& attn_out) const;

  // [X ; R] for the latent model, X for the baseline.
  Matrix infer_latent(const SequenceBatch& prompts, RPolicy policy, Rng* rng) const;

  // Pieces for step-wise decoding.
  const Embedding& embedding() const { return embedding_; }
  const Gru& decoder_gru() const { return decoder_; }
  const Linear& decoder_init() const { return decoder_init_; }
  const Linear& output() const { return output_; }

 private:
  ModelConfig cfg_;
  Embedding embedding_;
  Gru prompt_encoder_;
  Gru response_encoder_;
  Linear logvar_head_;
  Linear decoder_init_;
  Gru decoder_;
  BilinearAttention attention_;
  Linear bottleneck_;
  Linear output_;
};

std::vector<TokenId> to_time_major(const std::vector<TokenId>& row_major, std::size_t m,
                                   std::size_t width);
std::vector<std::uint8_t> time_major_mask(const std::vector<std::size_t>& lengths, std::size_t width);

Matrix concat_cols(const Matrix& a, const Matrix& b);

}  // namespace latentdial
