#pragma once

// Template corpora: each template has paraphrased prompts (shared content
// words, shuffled fillers) answered by a fixed cluster of related responses;
// generic responses are attached to prompts across templates.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "latentdial/data.hpp"
#include "latentdial/latent_inspect.hpp"

namespace latentdial {

struct TemplateSpec {
  std::size_t n_templates = 40;
  std::size_t paraphrases_per_prompt = 9;        // training prompts per template
  std::size_t test_paraphrases_per_prompt = 2;   // held-out prompts per template
  std::size_t responses_per_cluster = 5;
  std::size_t n_generic_responses = 3;
  double generic_attach_prob = 0.5;  // per prompt: chance of one extra pair with a generic response
  std::size_t vocab_size = 300;      // upper bound on distinct surface words
  std::size_t prompt_content_words = 2;
  std::size_t prompt_fillers = 2;
  std::size_t response_modifiers = 2;
  std::size_t response_fillers = 1;
  bool cluster_disjoint_test = false;  // hold out whole templates instead of paraphrases
  double test_template_fraction = 0.2; // used with cluster_disjoint_test
  std::uint64_t rng_seed = 1;

  void validate() const;
};

inline constexpr int kGenericCluster = -1;

struct PairLabel {
  std::size_t pair_id = 0;
  int cluster = 0;       // template id of the response, kGenericCluster for generic replies
  int prompt_template = 0;

  std::string cluster_name() const;
};

struct SynthTemplate {
  int id = 0;
  std::vector<std::string> train_prompts;
  std::vector<std::string> test_prompts;
  std::vector<std::string> responses;
  bool held_out = false;
};

struct SynthCorpus {
  std::vector<RawPair> train;
  std::vector<RawPair> test;
  std::vector<PairLabel> train_labels;
  std::vector<PairLabel> test_labels;
  std::vector<SynthTemplate> templates;
  std::vector<std::string> generic_responses;
  std::vector<std::string> words;  // every surface word used

  std::size_t generic_pair_count() const;
  // Groups for generic_separation, built from training prompts (or test
  // prompts when `test` is set).
  std::vector<TemplateGroup> groups(const Vocabulary& vocab, bool test = false) const;
  std::vector<TokenSeq> generic_sequences(const Vocabulary& vocab) const;
};

SynthCorpus generate_corpus(const TemplateSpec& spec);

// Writes train.tsv, test.tsv, train.labels.tsv, test.labels.tsv into `dir`.
void write_corpus(const std::filesystem::path& dir, const SynthCorpus& corpus);

// "pair_id<TAB>cluster_id" lines.
void write_labels(const std::filesystem::path& path, const std::vector<PairLabel>& labels);

}  // namespace latentdial
