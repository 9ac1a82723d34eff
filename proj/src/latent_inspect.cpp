#include "latentdial/latent_inspect.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "latentdial/inference.hpp"
#include "latentdial/rng.hpp"

namespace latentdial {

namespace {

constexpr std::size_t kChunk = 64;

template <class Encode>
Matrix encode_chunked(const std::vector<TokenSeq>& seqs, std::size_t width, Encode&& encode) {
  Matrix out(seqs.size(), width);
  for (std::size_t start = 0; start < seqs.size(); start += kChunk) {
    const std::size_t end = std::min(seqs.size(), start + kChunk);
    const std::vector<TokenSeq> chunk(seqs.begin() + start, seqs.begin() + end);
    const Matrix codes = encode(SequenceBatch::from_sequences(chunk));
    for (std::size_t i = 0; i < codes.rows(); ++i) std::copy_n(codes.row(i), width, out.row(start + i));
  }
  return out;
}

std::vector<double> row_vec(const Matrix& m, std::size_t r) { return {m.row(r), m.row(r) + m.cols()}; }

double euclid(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::string to_string(Role r) { return r == Role::Prompt ? "prompt" : "response"; }

Role role_from_string(const std::string& s) {
  if (s == "prompt") return Role::Prompt;
  if (s == "response") return Role::Response;
  throw std::invalid_argument("unknown role '" + s + "' (expected prompt|response)");
}

std::string to_string(Metric m) { return m == Metric::Euclidean ? "euclidean" : "cosine"; }

Metric metric_from_string(const std::string& s) {
  if (s == "euclidean") return Metric::Euclidean;
  if (s == "cosine") return Metric::Cosine;
  throw std::invalid_argument("unknown metric '" + s + "' (expected euclidean|cosine)");
}

Matrix encode_prompts(const DialogueModel& model, const std::vector<TokenSeq>& prompts) {
  return encode_chunked(prompts, model.config().k_correlated,
                        [&](const SequenceBatch& b) { return model.encode_prompt(b).x; });
}

Matrix encode_responses(const DialogueModel& model, const std::vector<TokenSeq>& responses) {
  std::vector<TokenSeq> terminated = responses;
  for (auto& r : terminated)
    if (r.empty() || r.back() != kEosId) r.push_back(kEosId);
  return encode_chunked(terminated, model.config().k_correlated,
                        [&](const SequenceBatch& b) { return model.encode_response(b, false, nullptr).y; });
}

ExportResult export_latents(const DialogueModel& model, const Vocabulary& vocab,
                            const std::vector<SentenceInput>& sentences) {
  if (model.config().kind != ModelKind::Latent) throw std::invalid_argument("latent export needs a latent model");
  ExportResult res;
  std::vector<TokenSeq> prompts, responses;
  std::vector<std::size_t> prompt_rec, response_rec;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    const auto& s = sentences[i];
    const auto words = split_tokens(s.text);
    if (words.empty()) {
      ++res.skipped;
      continue;
    }
    LatentRecord rec;
    rec.id = s.id.empty() ? std::to_string(i) : s.id;
    rec.role = s.role;
    rec.text = join_tokens(words);
    (s.role == Role::Prompt ? prompt_rec : response_rec).push_back(res.records.size());
    (s.role == Role::Prompt ? prompts : responses).push_back(vocab.encode(words));
    res.records.push_back(std::move(rec));
  }
  const Matrix x = encode_prompts(model, prompts);
  const Matrix y = encode_responses(model, responses);
  for (std::size_t i = 0; i < prompt_rec.size(); ++i) res.records[prompt_rec[i]].vector = row_vec(x, i);
  for (std::size_t i = 0; i < response_rec.size(); ++i) res.records[response_rec[i]].vector = row_vec(y, i);
  return res;
}

void write_latents_tsv(const std::filesystem::path& path, const std::vector<LatentRecord>& records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::setprecision(17);
  for (const auto& r : records) {
    out << r.id << '\t' << to_string(r.role) << '\t' << r.text;
    for (double v : r.vector) out << '\t' << v;
    out << '\n';
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::vector<LatentRecord> read_latents_tsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<LatentRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t start = 0;
    for (;;) {
      const auto tab = line.find('\t', start);
      f.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (f.size() < 4) throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": too few fields");
    LatentRecord r{f[0], role_from_string(f[1]), f[2], {}};
    for (std::size_t i = 3; i < f.size(); ++i) r.vector.push_back(std::stod(f[i]));
    if (!out.empty() && r.vector.size() != out.front().vector.size())
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": vector width differs");
    out.push_back(std::move(r));
  }
  return out;
}

double distance(const std::vector<double>& a, const std::vector<double>& b, Metric metric) {
  if (a.size() != b.size()) throw std::invalid_argument("distance: vector widths differ");
  if (metric == Metric::Euclidean) return euclid(a.data(), b.data(), a.size());
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 1.0;
  return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<Neighbor> nearest_neighbors(const std::string& query_id, const std::vector<LatentRecord>& records,
                                        std::size_t k, Metric metric) {
  const auto q = std::find_if(records.begin(), records.end(), [&](const LatentRecord& r) { return r.id == query_id; });
  if (q == records.end()) throw std::invalid_argument("unknown id '" + query_id + "'");
  if (k + 1 > records.size())
    throw std::invalid_argument("k = " + std::to_string(k) + " exceeds the " + std::to_string(records.size() - 1) +
                                " other records");
  std::vector<Neighbor> all;
  for (const auto& r : records)
    if (&r != &*q) all.push_back({r.id, distance(q->vector, r.vector, metric)});
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(),
                    [](const Neighbor& a, const Neighbor& b) {
                      return a.distance != b.distance ? a.distance < b.distance : a.id < b.id;
                    });
  all.resize(k);
  return all;
}

// ------------------------------------------------------------------ pairing

nlohmann::json PairingReport::to_json() const {
  return {{"samples", samples},
          {"matched_mean_dist", matched_mean_dist},
          {"mismatched_mean_dist", mismatched_mean_dist},
          {"matched_closer_rate", matched_closer_rate},
          {"median_gold_rank", median_gold_rank}};
}

PairingReport pairing_test(const Matrix& x, const Matrix& y, std::size_t n_samples, std::uint64_t seed) {
  PairingReport rep;
  if (n_samples == 0) return rep;
  if (!x.same_shape(y)) throw std::invalid_argument("pairing_test: code matrices differ in shape");
  const std::size_t n = x.rows();
  if (n < 2) throw std::invalid_argument("pairing_test needs at least two pairs");
  const std::size_t k = x.cols();

  Rng rng(derive_seed(seed, "pairing"));
  std::vector<std::size_t> sample;
  while (sample.size() < n_samples) {
    auto order = shuffled_order(n, derive_seed(seed, "pairing_order", sample.size()));
    for (std::size_t i = 0; i < n && sample.size() < n_samples; ++i) sample.push_back(order[i]);
  }

  // candidate pool for ranking: the distinct sampled responses
  std::vector<std::size_t> pool = sample;
  std::sort(pool.begin(), pool.end());
  pool.erase(std::unique(pool.begin(), pool.end()), pool.end());

  double matched = 0.0, mismatched = 0.0, closer = 0.0;
  std::vector<double> ranks;
  for (std::size_t s : sample) {
    const double dm = euclid(x.row(s), y.row(s), k);
    std::size_t other = rng.below(n - 1);
    if (other >= s) ++other;
    const double dr = euclid(x.row(s), y.row(other), k);
    matched += dm;
    mismatched += dr;
    closer += dm < dr ? 1.0 : (dm == dr ? 0.5 : 0.0);
    std::size_t rank = 1;
    for (std::size_t j : pool)
      if (j != s && euclid(x.row(s), y.row(j), k) < dm) ++rank;
    ranks.push_back(static_cast<double>(rank));
  }
  const double inv = 1.0 / static_cast<double>(sample.size());
  rep.samples = sample.size();
  rep.matched_mean_dist = matched * inv;
  rep.mismatched_mean_dist = mismatched * inv;
  rep.matched_closer_rate = closer * inv;
  rep.median_gold_rank = median(std::move(ranks));
  return rep;
}

PairingReport pairing_test(const DialogueModel& model, const std::vector<TokenizedPair>& pairs,
                           std::size_t n_samples, std::uint64_t seed) {
  if (n_samples == 0) return {};
  std::vector<TokenSeq> prompts, responses;
  for (const auto& p : pairs) {
    prompts.push_back(p.prompt);
    responses.push_back(p.response);
  }
  return pairing_test(encode_prompts(model, prompts), encode_responses(model, responses), n_samples, seed);
}

// ------------------------------------------------------------------ separation

nlohmann::json SeparationReport::to_json() const {
  return {{"templates", templates}, {"separated", separated}, {"rate", rate},
          {"cluster_dist", cluster_dist}, {"generic_dist", generic_dist}};
}

SeparationReport generic_separation(const DialogueModel& model, const std::vector<TemplateGroup>& groups,
                                    const std::vector<TokenSeq>& generic_responses) {
  if (generic_responses.empty()) throw std::invalid_argument("generic_separation needs generic responses");
  const Matrix g = encode_responses(model, generic_responses);
  const std::size_t k = g.cols();
  SeparationReport rep;
  for (const auto& grp : groups) {
    if (grp.prompts.empty() || grp.responses.empty()) continue;
    const Matrix x = encode_prompts(model, grp.prompts);
    const Matrix y = encode_responses(model, grp.responses);
    std::vector<double> centroid(k, 0.0);
    for (std::size_t r = 0; r < y.rows(); ++r)
      for (std::size_t d = 0; d < k; ++d) centroid[d] += y(r, d) / static_cast<double>(y.rows());
    double dc = 0.0, dg = 0.0;
    for (std::size_t p = 0; p < x.rows(); ++p) {
      dc += euclid(x.row(p), centroid.data(), k);
      for (std::size_t j = 0; j < g.rows(); ++j) dg += euclid(x.row(p), g.row(j), k) / static_cast<double>(g.rows());
    }
    dc /= static_cast<double>(x.rows());
    dg /= static_cast<double>(x.rows());
    rep.cluster_dist.push_back(dc);
    rep.generic_dist.push_back(dg);
    ++rep.templates;
    if (dc < dg) ++rep.separated;
  }
  rep.rate = rep.templates ? static_cast<double>(rep.separated) / static_cast<double>(rep.templates) : 0.0;
  return rep;
}

// ------------------------------------------------------------------ reconstruction

ReconstructionReport reconstruction_rate(const DialogueModel& model, const std::vector<TokenizedPair>& pairs,
                                         std::size_t max_length) {
  if (model.config().kind != ModelKind::Latent) throw std::invalid_argument("reconstruction needs a latent model");
  ReconstructionReport rep;
  GenerationOptions opts;
  opts.beam_width = 1;
  opts.length_norm_alpha = 0.0;
  opts.max_length = max_length;
  for (std::size_t start = 0; start < pairs.size(); start += kChunk) {
    const std::size_t end = std::min(pairs.size(), start + kChunk);
    std::vector<TokenSeq> responses;
    for (std::size_t i = start; i < end; ++i) responses.push_back(pairs[i].response);
    const ResponseEncoding enc = model.encode_response(SequenceBatch::from_sequences(responses), false, nullptr);
    const Matrix latent = concat_cols(enc.y, enc.yu);
    for (std::size_t i = start; i < end; ++i) {
      Matrix row(1, latent.cols());
      std::copy_n(latent.row(i - start), latent.cols(), row.data());
      const Generation gen = decode_latent(model, pairs[i].prompt, row, opts);
      TokenSeq gold;
      for (TokenId t : pairs[i].response)
        if (!is_special(t)) gold.push_back(t);
      ++rep.total;
      if (gen.finished && gen.tokens == gold) ++rep.exact;
    }
  }
  rep.rate = rep.total ? static_cast<double>(rep.exact) / static_cast<double>(rep.total) : 0.0;
  return rep;
}

}  // namespace latentdial
