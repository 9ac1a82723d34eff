#pragma once

// Latent export and quantitative proximity checks: nearest neighbours,
// prompt/gold-response pairing, generic-response separation, and the
// autoencoder reconstruction rate.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "latentdial/data.hpp"
#include "latentdial/model.hpp"

namespace latentdial {

enum class Role { Prompt, Response };
std::string to_string(Role r);
Role role_from_string(const std::string& s);

struct LatentRecord {
  std::string id;
  Role role = Role::Prompt;
  std::string text;
  std::vector<double> vector;
};

struct SentenceInput {
  std::string text;
  Role role = Role::Prompt;
  std::string id;  // empty: assigned from the input position
};

struct ExportResult {
  std::vector<LatentRecord> records;
  std::size_t skipped = 0;  // empty sentences
};

// Prompts go through the prompt encoder (X), responses through the response
// encoder (Y, correlated part only).
ExportResult export_latents(const DialogueModel& model, const Vocabulary& vocab,
                            const std::vector<SentenceInput>& sentences);

// Codes for many sequences at once, chunked; rows follow the input order.
Matrix encode_prompts(const DialogueModel& model, const std::vector<TokenSeq>& prompts);
// Responses are eos-terminated before encoding when they are not already.
Matrix encode_responses(const DialogueModel& model, const std::vector<TokenSeq>& responses);

// "id<TAB>role<TAB>text<TAB>v1<TAB>...<TAB>vk"
void write_latents_tsv(const std::filesystem::path& path, const std::vector<LatentRecord>& records);
std::vector<LatentRecord> read_latents_tsv(const std::filesystem::path& path);

enum class Metric { Euclidean, Cosine };
std::string to_string(Metric m);
Metric metric_from_string(const std::string& s);

double distance(const std::vector<double>& a, const std::vector<double>& b, Metric metric);

struct Neighbor {
  std::string id;
  double distance = 0.0;
};

// k nearest records to `query_id` (the query itself excluded), ascending
// distance, ties by id.
std::vector<Neighbor> nearest_neighbors(const std::string& query_id, const std::vector<LatentRecord>& records,
                                        std::size_t k, Metric metric = Metric::Euclidean);

struct PairingReport {
  std::size_t samples = 0;
  double matched_mean_dist = 0.0;
  double mismatched_mean_dist = 0.0;
  double matched_closer_rate = 0.0;  // ties count one half
  double median_gold_rank = 0.0;     // 1-based rank of the gold response among sampled responses

  nlohmann::json to_json() const;
};

// Samples prompts (without replacement while possible), compares the
// distance to the gold response code against a randomly drawn other response.
PairingReport pairing_test(const DialogueModel& model, const std::vector<TokenizedPair>& pairs,
                           std::size_t n_samples, std::uint64_t seed);
// Same procedure over precomputed codes (row i of x pairs with row i of y).
PairingReport pairing_test(const Matrix& x, const Matrix& y, std::size_t n_samples, std::uint64_t seed);

struct TemplateGroup {
  std::string cluster_id;
  std::vector<TokenSeq> prompts;
  std::vector<TokenSeq> responses;
};

struct SeparationReport {
  std::size_t templates = 0;
  std::size_t separated = 0;
  double rate = 0.0;
  std::vector<double> cluster_dist;  // mean |X - cluster centroid| per template
  std::vector<double> generic_dist;  // mean |X - Y_generic| per template

  nlohmann::json to_json() const;
};

// A template is separated when its prompts are on average closer to the
// centroid of their cluster's response codes than to the generic responses.
SeparationReport generic_separation(const DialogueModel& model, const std::vector<TemplateGroup>& groups,
                                    const std::vector<TokenSeq>& generic_responses);

struct ReconstructionReport {
  std::size_t total = 0;
  std::size_t exact = 0;
  double rate = 0.0;
};

// Encodes each clean response (posterior mean for the uncorrelated part),
// decodes greedily and counts exact matches including the final eos.
ReconstructionReport reconstruction_rate(const DialogueModel& model, const std::vector<TokenizedPair>& pairs,
                                         std::size_t max_length = 30);

}  // namespace latentdial
