#pragma once

// Corpus ingestion: vocabulary, tab-separated pair files, dedup, batching,
// and the token-dropout noise applied to autoencoder inputs.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace latentdial {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kUnkId = 1;
inline constexpr TokenId kBosId = 2;
inline constexpr TokenId kEosId = 3;
inline constexpr int kNumReserved = 4;

inline bool is_special(TokenId id) { return id == kPadId || id == kBosId || id == kEosId; }

std::vector<std::string> split_tokens(std::string_view line);
std::string join_tokens(const std::vector<std::string>& tokens);

class Vocabulary {
 public:
  // Reserved tokens only.
  Vocabulary();
  // `tokens` must begin with the four reserved surface forms.
  explicit Vocabulary(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  TokenId id(std::string_view token) const;
  const std::string& token(TokenId id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  TokenSeq encode(const std::vector<std::string>& words) const;
  // Drops pad/bos/eos.
  std::vector<std::string> decode(const TokenSeq& ids) const;

  // Stable content hash, stored in checkpoints to detect mismatched vocab files.
  std::uint64_t hash() const;

  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  static const std::vector<std::string>& reserved();

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

struct RawPair {
  std::vector<std::string> prompt;
  std::vector<std::string> response;
};

struct TokenizedPair {
  TokenSeq prompt;
  TokenSeq response;  // eos-terminated

  friend bool operator==(const TokenizedPair&, const TokenizedPair&) = default;
};

struct LoadResult {
  std::vector<RawPair> raw;
  std::size_t skipped = 0;
  std::vector<std::size_t> skipped_lines;  // 1-based
};

// Parses "prompt<TAB>response" lines. Malformed lines are counted and skipped;
// an unreadable file throws.
LoadResult read_pair_file(const std::filesystem::path& path);
LoadResult parse_pairs(std::string_view text);

std::vector<TokenizedPair> tokenize_pairs(const std::vector<RawPair>& raw, const Vocabulary& vocab);

struct LoadedPairs {
  std::vector<TokenizedPair> pairs;
  std::size_t skipped = 0;
};

LoadedPairs load_pairs(const std::filesystem::path& path, const Vocabulary& vocab);

Vocabulary build_vocab(const std::vector<RawPair>& pairs, int min_freq);

// Removes eval pairs whose prompt and response both exactly match a training pair.
std::vector<TokenizedPair> dedup_filter(const std::vector<TokenizedPair>& train,
                                        const std::vector<TokenizedPair>& eval);

struct Batch {
  std::size_t m = 0;
  std::size_t prompt_width = 0;
  std::size_t response_width = 0;
  std::vector<TokenId> prompts;          // m x prompt_width, pad-filled
  std::vector<TokenId> responses;        // m x response_width
  std::vector<TokenId> noised_responses; // m x response_width
  std::vector<std::size_t> prompt_lengths;
  std::vector<std::size_t> response_lengths;
  std::vector<std::size_t> source_index;  // position of each row in the input pair list

  TokenId prompt_at(std::size_t row, std::size_t t) const { return prompts[row * prompt_width + t]; }
  TokenId response_at(std::size_t row, std::size_t t) const {
    return responses[row * response_width + t];
  }
};

// Packs the given pairs (in order) into one padded batch; noised_responses
// starts as a copy of responses.
Batch collate(const std::vector<TokenizedPair>& pairs, const std::vector<std::size_t>& rows);

struct BatchingOptions {
  std::size_t batch_size = 64;
  bool drop_last = false;
};

// Shuffles with the seed, then cuts consecutive batches. batch_size < 2 throws.
std::vector<Batch> make_batches(const std::vector<TokenizedPair>& pairs,
                                const BatchingOptions& opts, std::uint64_t seed);

std::vector<std::size_t> shuffled_order(std::size_t n, std::uint64_t seed);

struct DenoisingConfig {
  double replace_prob = 0.15;
  std::uint64_t rng_seed = 0;
};

class Rng;

TokenSeq apply_denoising(const TokenSeq& tokens, double replace_prob, Rng& rng);
TokenSeq apply_denoising(const TokenSeq& tokens, const DenoisingConfig& cfg);

// Fills batch.noised_responses from batch.responses, skipping pad/bos/eos.
void apply_denoising(Batch& batch, double replace_prob, Rng& rng);

void write_pair_file(const std::filesystem::path& path, const std::vector<RawPair>& pairs);

}  // namespace latentdial
