#include "latentdial/metrics.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <stdexcept>

#include "latentdial/data.hpp"

namespace latentdial {

namespace {

std::map<std::vector<std::string>, std::size_t> ngram_counts(const Sentence& s, std::size_t n) {
  std::map<std::vector<std::string>, std::size_t> out;
  if (s.size() < n) return out;
  for (std::size_t i = 0; i + n <= s.size(); ++i) ++out[Sentence(s.begin() + i, s.begin() + i + n)];
  return out;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto tab = line.find('\t', start);
    out.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

}  // namespace

double bleu_n(const std::vector<Sentence>& hyps, const std::vector<Sentence>& refs, int n) {
  if (n < 1) throw std::invalid_argument("BLEU order must be >= 1");
  if (hyps.size() != refs.size()) throw std::invalid_argument("BLEU: hypothesis and reference counts differ");
  if (hyps.empty()) throw std::invalid_argument("BLEU: empty corpus");
  std::size_t hyp_len = 0, ref_len = 0;
  std::vector<double> matches(n, 0.0), totals(n, 0.0);
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    hyp_len += hyps[i].size();
    ref_len += refs[i].size();
    for (int j = 1; j <= n; ++j) {
      const auto h = ngram_counts(hyps[i], j);
      const auto r = ngram_counts(refs[i], j);
      for (const auto& [g, c] : h) {
        totals[j - 1] += static_cast<double>(c);
        const auto it = r.find(g);
        if (it != r.end()) matches[j - 1] += static_cast<double>(std::min(c, it->second));
      }
    }
  }
  if (hyp_len == 0) return 0.0;
  double log_sum = 0.0;
  for (int j = 0; j < n; ++j) {
    const double p = (matches[j] > 0.0 && totals[j] > 0.0) ? matches[j] / totals[j]
                                                           : kBleuEpsilon / std::max(totals[j], 1.0);
    log_sum += std::log(p);
  }
  const double bp = hyp_len > ref_len ? 1.0
                                      : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
  return bp * std::exp(log_sum / n);
}

// ------------------------------------------------------------------ embeddings

EmbeddingTable EmbeddingTable::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read embedding table: " + path.string());
  EmbeddingTable t;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::string tok;
    if (!(ss >> tok)) continue;
    std::vector<double> v;
    double x;
    while (ss >> x) v.push_back(x);
    if (!ss.eof()) throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": bad number");
    if (t.dim_ == 0) t.dim_ = v.size();
    if (v.size() != t.dim_ || v.empty())
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected " +
                               std::to_string(t.dim_) + " values");
    t.table_[tok] = std::move(v);
  }
  return t;
}

void EmbeddingTable::add(const std::string& token, std::vector<double> vec) {
  if (dim_ == 0) dim_ = vec.size();
  if (vec.size() != dim_) throw std::invalid_argument("embedding width mismatch for " + token);
  table_[token] = std::move(vec);
}

const std::vector<double>* EmbeddingTable::find(const std::string& token) const {
  const auto it = table_.find(token);
  return it == table_.end() ? nullptr : &it->second;
}

std::optional<std::vector<double>> mean_embedding(const Sentence& s, const EmbeddingTable& table) {
  std::vector<double> sum(table.dim(), 0.0);
  std::size_t n = 0;
  for (const auto& w : s) {
    const auto* v = table.find(w);
    if (!v) continue;
    for (std::size_t d = 0; d < sum.size(); ++d) sum[d] += (*v)[d];
    ++n;
  }
  if (n == 0) return std::nullopt;
  for (auto& x : sum) x /= static_cast<double>(n);
  return sum;
}

std::optional<double> embedding_pair_similarity(const Sentence& hyp, const Sentence& ref,
                                                const EmbeddingTable& table) {
  const auto a = mean_embedding(hyp, table);
  const auto b = mean_embedding(ref, table);
  if (!a || !b) return std::nullopt;
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t d = 0; d < a->size(); ++d) {
    dot += (*a)[d] * (*b)[d];
    na += (*a)[d] * (*a)[d];
    nb += (*b)[d] * (*b)[d];
  }
  if (na == 0.0 || nb == 0.0) return std::nullopt;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

SimilarityResult embedding_avg_similarity(const std::vector<Sentence>& hyps, const std::vector<Sentence>& refs,
                                          const EmbeddingTable& table) {
  if (hyps.size() != refs.size()) throw std::invalid_argument("similarity: hypothesis and reference counts differ");
  SimilarityResult r;
  double sum = 0.0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    const auto s = embedding_pair_similarity(hyps[i], refs[i], table);
    if (!s) {
      ++r.skipped;
      continue;
    }
    sum += *s;
    ++r.pairs;
  }
  if (r.pairs) r.mean = sum / static_cast<double>(r.pairs);
  return r;
}

// ------------------------------------------------------------------ distinct

double distinct_n(const std::vector<Sentence>& responses, int n) {
  if (n < 1) throw std::invalid_argument("distinct order must be >= 1");
  std::set<Sentence> seen;
  std::size_t words = 0;
  for (const auto& s : responses) {
    words += s.size();
    for (std::size_t i = 0; i + n <= s.size(); ++i) seen.emplace(s.begin() + i, s.begin() + i + n);
  }
  return words ? static_cast<double>(seen.size()) / static_cast<double>(words) : 0.0;
}

double out_of_corpus_bigram_rate(const std::vector<Sentence>& responses, const std::vector<Sentence>& corpus) {
  std::set<std::pair<std::string, std::string>> known;
  for (const auto& s : corpus)
    for (std::size_t i = 0; i + 1 < s.size(); ++i) known.emplace(s[i], s[i + 1]);
  std::size_t total = 0, novel = 0;
  for (const auto& s : responses)
    for (std::size_t i = 0; i + 1 < s.size(); ++i) {
      ++total;
      if (!known.count({s[i], s[i + 1]})) ++novel;
    }
  return total ? static_cast<double>(novel) / static_cast<double>(total) : 0.0;
}

// ------------------------------------------------------------------ UI score

std::vector<AnnotationRecord> parse_annotations(const std::string& text) {
  std::vector<AnnotationRecord> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  auto score = [&](const std::string& s, const char* what) {
    std::size_t pos = 0;
    int v = -1;
    try {
      v = std::stoi(s, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != s.size() || v < 0 || v > 3)
      throw std::invalid_argument("annotation line " + std::to_string(lineno) + ": " + what +
                                  " must be an integer in [0,3], got '" + s + "'");
    return v;
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_tabs(line);
    if (f.size() != 4) throw std::invalid_argument("annotation line " + std::to_string(lineno) + ": expected 4 fields");
    out.push_back({f[0], f[1], score(f[2], "informativeness"), score(f[3], "relevance")});
  }
  return out;
}

std::vector<AnnotationRecord> read_annotations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read annotations: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_annotations(ss.str());
}

UiReport ui_report(const std::vector<AnnotationRecord>& records) {
  struct Acc {
    double info = 0.0, rel = 0.0;
    std::size_t n = 0;
  };
  std::map<std::string, Acc> by_id;
  for (const auto& r : records) {
    if (r.informativeness < 0 || r.informativeness > 3 || r.relevance < 0 || r.relevance > 3)
      throw std::invalid_argument("annotation scores must lie in [0,3]");
    auto& a = by_id[r.response_id];
    a.info += r.informativeness;
    a.rel += r.relevance;
    ++a.n;
  }
  if (by_id.empty()) throw std::invalid_argument("no annotations");
  UiReport rep;
  for (const auto& [id, a] : by_id) {
    const double info = a.info / static_cast<double>(a.n);
    const double rel = a.rel / static_cast<double>(a.n);
    rep.ui += info * rel;
    rep.informativeness += info;
    rep.relevance += rel;
  }
  rep.responses = by_id.size();
  const double inv = 1.0 / static_cast<double>(rep.responses);
  rep.ui *= inv;
  rep.informativeness *= inv;
  rep.relevance *= inv;
  return rep;
}

UiReport ui_report(const std::vector<AnnotationRecord>& records, const std::vector<std::string>& response_ids) {
  std::set<std::string> have;
  for (const auto& r : records) have.insert(r.response_id);
  for (const auto& id : response_ids)
    if (!have.count(id)) throw std::invalid_argument("response " + id + " has no annotations");
  std::set<std::string> wanted(response_ids.begin(), response_ids.end());
  std::vector<AnnotationRecord> kept;
  for (const auto& r : records)
    if (wanted.count(r.response_id)) kept.push_back(r);
  return ui_report(kept);
}

double ui_score(const std::vector<AnnotationRecord>& records) { return ui_report(records).ui; }

// ------------------------------------------------------------------ report

EvalReport evaluate_responses(const std::vector<Sentence>& hyps, const std::vector<Sentence>& refs,
                              const EmbeddingTable* table) {
  EvalReport r;
  r.bleu1 = bleu_n(hyps, refs, 1);
  r.bleu2 = bleu_n(hyps, refs, 2);
  if (table) {
    const auto s = embedding_avg_similarity(hyps, refs, *table);
    r.sim = s.mean;
    r.sim_pairs = s.pairs;
    r.sim_skipped = s.skipped;
    r.has_sim = true;
  }
  r.dist1 = distinct_n(hyps, 1);
  r.dist2 = distinct_n(hyps, 2);
  r.responses = hyps.size();
  for (const auto& h : hyps) r.tokens += h.size();
  return r;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j = {{"bleu1", bleu1},         {"bleu2", bleu2}, {"dist1", dist1},
                      {"dist2", dist2},         {"responses", responses}, {"tokens", tokens}};
  if (has_sim) {
    j["sim"] = sim;
    j["sim_pairs"] = sim_pairs;
    j["sim_skipped"] = sim_skipped;
  } else {
    j["sim"] = nullptr;
  }
  if (ui) j["ui"] = {{"rel", ui->relevance}, {"info", ui->informativeness}, {"ui", ui->ui}, {"responses", ui->responses}};
  return j;
}

std::string EvalReport::table(const std::string& row_label) const {
  std::ostringstream os;
  const int w = 9;
  os << std::left << std::setw(16) << "" << std::right;
  for (const char* h : {"Bleu-1", "Bleu-2", "Sim", "Dist-1", "Dist-2"}) os << std::setw(w) << h;
  if (ui)
    for (const char* h : {"Rel", "Info", "UI"}) os << std::setw(w) << h;
  os << '\n' << std::left << std::setw(16) << row_label << std::right << std::fixed << std::setprecision(4);
  os << std::setw(w) << bleu1 << std::setw(w) << bleu2;
  if (has_sim)
    os << std::setw(w) << sim;
  else
    os << std::setw(w) << "-";
  os << std::setw(w) << dist1 << std::setw(w) << dist2;
  if (ui) os << std::setprecision(2) << std::setw(w) << ui->relevance << std::setw(w) << ui->informativeness << std::setw(w) << ui->ui;
  os << '\n';
  return os.str();
}

std::vector<Sentence> read_sentences(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<Sentence> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto f = split_tabs(line);
    out.push_back(split_tokens(f.size() >= 2 ? f[1] : f[0]));
  }
  return out;
}

}  // namespace latentdial
