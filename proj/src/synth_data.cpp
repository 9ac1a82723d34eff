#include "latentdial/synth_data.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <stdexcept>

#include "latentdial/rng.hpp"

namespace latentdial {

namespace {

constexpr std::size_t kFillers = 12;
constexpr std::size_t kModifiers = 40;
constexpr std::size_t kGenericWords = 6;
constexpr int kMaxAttempts = 10000;

std::vector<std::string> pool(const std::string& prefix, std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

std::vector<std::string> pick(const std::vector<std::string>& from, std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(from.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  rng.shuffle(idx.begin(), idx.end());
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(from[idx[i]]);
  return out;
}

// Draws distinct sentences from `make` until `n` are collected.
template <class Make>
std::vector<std::string> distinct(std::size_t n, std::set<std::string>& used, Make&& make) {
  std::vector<std::string> out;
  for (int attempt = 0; out.size() < n; ++attempt) {
    if (attempt > kMaxAttempts) throw std::runtime_error("synthetic corpus: not enough distinct surface forms");
    std::string s = join_tokens(make());
    if (used.insert(s).second) out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

void TemplateSpec::validate() const {
  if (n_templates < 1) throw std::invalid_argument("n_templates must be >= 1");
  if (paraphrases_per_prompt < 1) throw std::invalid_argument("paraphrases_per_prompt must be >= 1");
  if (responses_per_cluster < 2) throw std::invalid_argument("responses_per_cluster must be >= 2");
  if (generic_attach_prob < 0.0 || generic_attach_prob > 1.0)
    throw std::invalid_argument("generic_attach_prob must lie in [0,1]");
  if (generic_attach_prob > 0.0 && n_generic_responses == 0)
    throw std::invalid_argument("generic_attach_prob > 0 needs generic responses");
  if (prompt_fillers > kFillers || response_fillers > kFillers) throw std::invalid_argument("too many fillers");
  if (response_modifiers > kModifiers) throw std::invalid_argument("too many response modifiers");
  if (cluster_disjoint_test && (test_template_fraction <= 0.0 || test_template_fraction >= 1.0))
    throw std::invalid_argument("test_template_fraction must lie in (0,1)");
  const std::size_t words = kFillers + kModifiers + (n_generic_responses ? kGenericWords : 0) +
                            n_templates * (prompt_content_words + 1);
  if (words > vocab_size)
    throw std::invalid_argument("template spec needs " + std::to_string(words) + " words but vocab_size is " +
                                std::to_string(vocab_size));
}

std::string PairLabel::cluster_name() const {
  return cluster == kGenericCluster ? "generic" : "c" + std::to_string(cluster);
}

std::size_t SynthCorpus::generic_pair_count() const {
  return static_cast<std::size_t>(std::count_if(train_labels.begin(), train_labels.end(),
                                                [](const PairLabel& l) { return l.cluster == kGenericCluster; }));
}

std::vector<TemplateGroup> SynthCorpus::groups(const Vocabulary& vocab, bool test) const {
  std::vector<TemplateGroup> out;
  for (const auto& t : templates) {
    TemplateGroup g;
    g.cluster_id = "c" + std::to_string(t.id);
    for (const auto& p : (test ? t.test_prompts : t.train_prompts)) g.prompts.push_back(vocab.encode(split_tokens(p)));
    for (const auto& r : t.responses) g.responses.push_back(vocab.encode(split_tokens(r)));
    if (!g.prompts.empty()) out.push_back(std::move(g));
  }
  return out;
}

std::vector<TokenSeq> SynthCorpus::generic_sequences(const Vocabulary& vocab) const {
  std::vector<TokenSeq> out;
  for (const auto& g : generic_responses) out.push_back(vocab.encode(split_tokens(g)));
  return out;
}

SynthCorpus generate_corpus(const TemplateSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.rng_seed, "synth"));
  const auto fillers = pool("f", kFillers);
  const auto modifiers = pool("m", kModifiers);
  const auto generic_words = pool("g", kGenericWords);

  SynthCorpus c;
  std::set<std::string> used;
  for (std::size_t i = 0; i < spec.n_generic_responses; ++i) {
    c.generic_responses.push_back(distinct(1, used, [&] {
      return pick(generic_words, 3 + rng.below(2), rng);
    }).front());
  }

  for (std::size_t t = 0; t < spec.n_templates; ++t) {
    SynthTemplate tpl;
    tpl.id = static_cast<int>(t);
    const auto content = pool("q" + std::to_string(t) + "x", spec.prompt_content_words);
    const std::string key = "c" + std::to_string(t);
    auto prompt = [&] {
      auto words = content;
      for (auto& f : pick(fillers, spec.prompt_fillers, rng)) words.push_back(f);
      rng.shuffle(words.begin(), words.end());
      return words;
    };
    tpl.train_prompts = distinct(spec.paraphrases_per_prompt, used, prompt);
    tpl.test_prompts = distinct(spec.test_paraphrases_per_prompt, used, prompt);
    tpl.responses = distinct(spec.responses_per_cluster, used, [&] {
      std::vector<std::string> words{key};
      for (auto& m : pick(modifiers, spec.response_modifiers, rng)) words.push_back(m);
      for (auto& f : pick(fillers, spec.response_fillers, rng)) words.push_back(f);
      rng.shuffle(words.begin(), words.end());
      return words;
    });
    c.templates.push_back(std::move(tpl));
  }

  if (spec.cluster_disjoint_test) {
    std::vector<std::size_t> order(spec.n_templates);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order.begin(), order.end());
    const auto held = std::max<std::size_t>(
        1, static_cast<std::size_t>(spec.test_template_fraction * static_cast<double>(spec.n_templates) + 0.5));
    for (std::size_t i = 0; i < held && i + 1 < order.size(); ++i) c.templates[order[i]].held_out = true;
  }

  auto emit = [&](std::vector<RawPair>& pairs, std::vector<PairLabel>& labels, const std::string& prompt,
                  const SynthTemplate& tpl) {
    for (const auto& r : tpl.responses) {
      labels.push_back({pairs.size(), tpl.id, tpl.id});
      pairs.push_back({split_tokens(prompt), split_tokens(r)});
    }
    if (spec.generic_attach_prob > 0.0 && rng.uniform() < spec.generic_attach_prob) {
      labels.push_back({pairs.size(), kGenericCluster, tpl.id});
      pairs.push_back({split_tokens(prompt), split_tokens(c.generic_responses[rng.below(c.generic_responses.size())])});
    }
  };
  for (const auto& tpl : c.templates) {
    if (tpl.held_out) {
      for (const auto& p : tpl.train_prompts) emit(c.test, c.test_labels, p, tpl);
      for (const auto& p : tpl.test_prompts) emit(c.test, c.test_labels, p, tpl);
    } else {
      for (const auto& p : tpl.train_prompts) emit(c.train, c.train_labels, p, tpl);
      for (const auto& p : tpl.test_prompts) emit(c.test, c.test_labels, p, tpl);
    }
  }

  std::set<std::string> words;
  for (const auto* set : {&c.train, &c.test})
    for (const auto& p : *set) {
      words.insert(p.prompt.begin(), p.prompt.end());
      words.insert(p.response.begin(), p.response.end());
    }
  c.words.assign(words.begin(), words.end());
  return c;
}

void write_labels(const std::filesystem::path& path, const std::vector<PairLabel>& labels) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& l : labels) out << l.pair_id << '\t' << l.cluster_name() << '\n';
}

void write_corpus(const std::filesystem::path& dir, const SynthCorpus& corpus) {
  std::filesystem::create_directories(dir);
  write_pair_file(dir / "train.tsv", corpus.train);
  write_pair_file(dir / "test.tsv", corpus.test);
  write_labels(dir / "train.labels.tsv", corpus.train_labels);
  write_labels(dir / "test.labels.tsv", corpus.test_labels);
}

}  // namespace latentdial
