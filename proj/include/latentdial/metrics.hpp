#pragma once

// Automatic response metrics (corpus BLEU-1/2, embedding-average cosine,
// distinct-n) and the human UI score aggregated from annotation files.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace latentdial {

using Sentence = std::vector<std::string>;

inline constexpr double kBleuEpsilon = 1e-9;

// Corpus BLEU restricted to orders 1..n (uniform geometric mean) with the
// standard brevity penalty. Zero match counts are replaced by kBleuEpsilon.
double bleu_n(const std::vector<Sentence>& hypotheses, const std::vector<Sentence>& references, int n);

class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  explicit EmbeddingTable(std::size_t dim) : dim_(dim) {}

  // Plain text, one "token v1 ... vd" per line. Lines of the wrong width throw.
  static EmbeddingTable load(const std::filesystem::path& path);

  void add(const std::string& token, std::vector<double> vec);
  const std::vector<double>* find(const std::string& token) const;
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return table_.size(); }

 private:
  std::size_t dim_ = 0;
  std::map<std::string, std::vector<double>> table_;
};

// Mean of the in-vocabulary word vectors; nullopt when no word is covered.
std::optional<std::vector<double>> mean_embedding(const Sentence& s, const EmbeddingTable& table);

// Cosine of the two mean vectors; nullopt when either side has no covered
// word or a zero mean.
std::optional<double> embedding_pair_similarity(const Sentence& hyp, const Sentence& ref,
                                                const EmbeddingTable& table);

struct SimilarityResult {
  double mean = 0.0;
  std::size_t pairs = 0;    // scored pairs
  std::size_t skipped = 0;  // pairs without coverage on a side
};

SimilarityResult embedding_avg_similarity(const std::vector<Sentence>& hypotheses,
                                          const std::vector<Sentence>& references,
                                          const EmbeddingTable& table);

// |distinct n-grams| / total words over all responses.
double distinct_n(const std::vector<Sentence>& responses, int n);

// Share of response bigrams never seen in `corpus`; 0 when there are no bigrams.
double out_of_corpus_bigram_rate(const std::vector<Sentence>& responses, const std::vector<Sentence>& corpus);

struct AnnotationRecord {
  std::string response_id;
  std::string annotator_id;
  int informativeness = 0;  // 0..3
  int relevance = 0;        // 0..3
};

// "response_id<TAB>annotator_id<TAB>informativeness<TAB>relevance" per line.
std::vector<AnnotationRecord> parse_annotations(const std::string& text);
std::vector<AnnotationRecord> read_annotations(const std::filesystem::path& path);

struct UiReport {
  double ui = 0.0;               // mean over responses of mean_info * mean_rel
  double informativeness = 0.0;  // mean over responses of mean_info
  double relevance = 0.0;        // mean over responses of mean_rel
  std::size_t responses = 0;
};

UiReport ui_report(const std::vector<AnnotationRecord>& records);
// Every id in `response_ids` must carry at least one annotation.
UiReport ui_report(const std::vector<AnnotationRecord>& records, const std::vector<std::string>& response_ids);
double ui_score(const std::vector<AnnotationRecord>& records);

struct EvalReport {
  double bleu1 = 0.0;
  double bleu2 = 0.0;
  double sim = 0.0;
  std::size_t sim_pairs = 0;
  std::size_t sim_skipped = 0;
  bool has_sim = false;
  double dist1 = 0.0;
  double dist2 = 0.0;
  std::size_t responses = 0;
  std::size_t tokens = 0;
  std::optional<UiReport> ui;

  nlohmann::json to_json() const;
  // Columns: Bleu-1 Bleu-2 Sim Dist-1 Dist-2, then Rel Info UI when present.
  std::string table(const std::string& row_label = "model") const;
};

EvalReport evaluate_responses(const std::vector<Sentence>& hypotheses, const std::vector<Sentence>& references,
                              const EmbeddingTable* table);

// One sentence per line. Tab-separated lines contribute their second field,
// so pair files and generation outputs can be read directly.
std::vector<Sentence> read_sentences(const std::filesystem::path& path);

}  // namespace latentdial
