#include "latentdial/data.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "latentdial/rng.hpp"

namespace latentdial {

std::vector<std::string> split_tokens(std::string_view line) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\r' || line[i] == '\n')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\r' && line[j] != '\n') ++j;
    if (j > i) out.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

const std::vector<std::string>& Vocabulary::reserved() {
  static const std::vector<std::string> names{"<pad>", "<unk>", "<bos>", "<eos>"};
  return names;
}

Vocabulary::Vocabulary() : Vocabulary(reserved()) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < kNumReserved ||
      !std::equal(reserved().begin(), reserved().end(), tokens_.begin())) {
    throw std::invalid_argument("vocabulary must start with <pad> <unk> <bos> <eos>");
  }
  index_.reserve(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second)
      throw std::invalid_argument("duplicate vocabulary entry: " + tokens_[i]);
  }
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw std::out_of_range("token id out of range: " + std::to_string(id));
  return tokens_[static_cast<std::size_t>(id)];
}

TokenSeq Vocabulary::encode(const std::vector<std::string>& words) const {
  TokenSeq ids;
  ids.reserve(words.size());
  for (const auto& w : words) ids.push_back(id(w));
  return ids;
}

std::vector<std::string> Vocabulary::decode(const TokenSeq& ids) const {
  std::vector<std::string> out;
  for (TokenId t : ids) {
    if (is_special(t)) continue;
    out.push_back(token(t));
  }
  return out;
}

std::uint64_t Vocabulary::hash() const {
  std::uint64_t h = fnv1a("vocab");
  for (const auto& t : tokens_) h = mix64(h ^ fnv1a(t));
  return h;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write vocabulary: " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
  if (!out) throw std::runtime_error("failed writing vocabulary: " + path.string());
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read vocabulary: " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return Vocabulary(std::move(tokens));
}

LoadResult parse_pairs(std::string_view text) {
  LoadResult result;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    const std::size_t tab = line.find('\t');
    bool ok = tab != std::string_view::npos && line.find('\t', tab + 1) == std::string_view::npos;
    RawPair pair;
    if (ok) {
      pair.prompt = split_tokens(line.substr(0, tab));
      pair.response = split_tokens(line.substr(tab + 1));
      ok = !pair.prompt.empty() && !pair.response.empty();
    }
    if (!ok) {
      ++result.skipped;
      result.skipped_lines.push_back(line_no);
      continue;
    }
    result.raw.push_back(std::move(pair));
  }
  return result;
}

LoadResult read_pair_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read pair file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_pairs(ss.str());
}

std::vector<TokenizedPair> tokenize_pairs(const std::vector<RawPair>& raw, const Vocabulary& vocab) {
  std::vector<TokenizedPair> out;
  out.reserve(raw.size());
  for (const auto& r : raw) {
    TokenizedPair p{vocab.encode(r.prompt), vocab.encode(r.response)};
    p.response.push_back(kEosId);
    out.push_back(std::move(p));
  }
  return out;
}

LoadedPairs load_pairs(const std::filesystem::path& path, const Vocabulary& vocab) {
  auto loaded = read_pair_file(path);
  return {tokenize_pairs(loaded.raw, vocab), loaded.skipped};
}

Vocabulary build_vocab(const std::vector<RawPair>& pairs, int min_freq) {
  if (min_freq < 1) throw std::invalid_argument("min_freq must be >= 1");
  std::map<std::string, std::size_t> counts;
  std::size_t total = 0;
  for (const auto& p : pairs) {
    for (const auto& w : p.prompt) ++counts[w], ++total;
    for (const auto& w : p.response) ++counts[w], ++total;
  }
  if (total == 0) throw std::invalid_argument("cannot build vocabulary from an empty corpus");
  const auto& reserved = Vocabulary::reserved();
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [w, c] : counts) {
    if (c < static_cast<std::size_t>(min_freq)) continue;
    if (std::find(reserved.begin(), reserved.end(), w) != reserved.end()) continue;
    kept.emplace_back(w, c);
  }
  // map iteration is lexicographic, so a stable sort on count keeps the tie-break.
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens = reserved;
  for (auto& [w, c] : kept) tokens.push_back(w);
  return Vocabulary(std::move(tokens));
}

std::vector<TokenizedPair> dedup_filter(const std::vector<TokenizedPair>& train,
                                        const std::vector<TokenizedPair>& eval) {
  std::set<std::pair<TokenSeq, TokenSeq>> seen;
  for (const auto& p : train) seen.emplace(p.prompt, p.response);
  std::vector<TokenizedPair> out;
  for (const auto& p : eval) {
    if (!seen.contains({p.prompt, p.response})) out.push_back(p);
  }
  return out;
}

Batch collate(const std::vector<TokenizedPair>& pairs, const std::vector<std::size_t>& rows) {
  Batch b;
  b.m = rows.size();
  for (std::size_t r : rows) {
    const auto& p = pairs.at(r);
    if (p.prompt.empty() || p.response.empty())
      throw std::invalid_argument("cannot batch an empty sequence");
    b.prompt_width = std::max(b.prompt_width, p.prompt.size());
    b.response_width = std::max(b.response_width, p.response.size());
  }
  b.prompts.assign(b.m * b.prompt_width, kPadId);
  b.responses.assign(b.m * b.response_width, kPadId);
  for (std::size_t i = 0; i < b.m; ++i) {
    const auto& p = pairs[rows[i]];
    std::copy(p.prompt.begin(), p.prompt.end(), b.prompts.begin() + i * b.prompt_width);
    std::copy(p.response.begin(), p.response.end(), b.responses.begin() + i * b.response_width);
    b.prompt_lengths.push_back(p.prompt.size());
    b.response_lengths.push_back(p.response.size());
    b.source_index.push_back(rows[i]);
  }
  b.noised_responses = b.responses;
  return b;
}

std::vector<std::size_t> shuffled_order(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order.begin(), order.end());
  return order;
}

std::vector<Batch> make_batches(const std::vector<TokenizedPair>& pairs,
                                const BatchingOptions& opts, std::uint64_t seed) {
  if (opts.batch_size < 2)
    throw std::invalid_argument("batch_size must be >= 2: batch correlation needs two rows");
  const auto order = shuffled_order(pairs.size(), seed);
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += opts.batch_size) {
    const std::size_t end = std::min(order.size(), start + opts.batch_size);
    if (end - start < opts.batch_size && opts.drop_last) break;
    std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                  order.begin() + static_cast<std::ptrdiff_t>(end));
    batches.push_back(collate(pairs, rows));
  }
  return batches;
}

TokenSeq apply_denoising(const TokenSeq& tokens, double replace_prob, Rng& rng) {
  if (replace_prob < 0.0 || replace_prob > 1.0)
    throw std::invalid_argument("replace_prob must lie in [0, 1]");
  TokenSeq out = tokens;
  for (auto& t : out) {
    if (is_special(t)) continue;
    // one draw per eligible token keeps streams aligned across probabilities
    if (rng.uniform() < replace_prob) t = kUnkId;
  }
  return out;
}

TokenSeq apply_denoising(const TokenSeq& tokens, const DenoisingConfig& cfg) {
  Rng rng(cfg.rng_seed);
  return apply_denoising(tokens, cfg.replace_prob, rng);
}

void apply_denoising(Batch& batch, double replace_prob, Rng& rng) {
  if (replace_prob < 0.0 || replace_prob > 1.0)
    throw std::invalid_argument("replace_prob must lie in [0, 1]");
  batch.noised_responses = batch.responses;
  if (replace_prob == 0.0) return;
  for (auto& t : batch.noised_responses) {
    if (is_special(t)) continue;
    if (rng.uniform() < replace_prob) t = kUnkId;
  }
}

void write_pair_file(const std::filesystem::path& path, const std::vector<RawPair>& pairs) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write pair file: " + path.string());
  for (const auto& p : pairs) out << join_tokens(p.prompt) << '\t' << join_tokens(p.response) << '\n';
  if (!out) throw std::runtime_error("failed writing pair file: " + path.string());
}

}  // namespace latentdial
