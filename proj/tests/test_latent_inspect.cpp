#include "doctest.h"

#include "helpers.hpp"
#include "latentdial/latent_inspect.hpp"

using namespace latentdial;

namespace {

LatentRecord rec(const std::string& id, std::vector<double> v, Role role = Role::Prompt) {
  return {id, role, "text " + id, std::move(v)};
}

DialogueModel small_model() {
  ModelConfig mc;
  mc.vocab_size = 10;
  mc.embedding_dim = 4;
  mc.k_correlated = 3;
  mc.k_uncorrelated = 2;
  return DialogueModel(mc, 2);
}

}  // namespace

TEST_CASE("distances") {
  CHECK(distance({0, 0}, {3, 4}, Metric::Euclidean) == doctest::Approx(5.0));
  CHECK(distance({1, 0}, {0, 2}, Metric::Cosine) == doctest::Approx(1.0));
  CHECK(distance({1, 1}, {2, 2}, Metric::Cosine) == doctest::Approx(0.0));
  CHECK(metric_from_string("cosine") == Metric::Cosine);
  CHECK_THROWS(metric_from_string("manhattan"));
}

TEST_CASE("nearest neighbours exclude the query and break ties by id") {
  const std::vector<LatentRecord> rs{rec("q", {0, 0}), rec("b", {1, 0}), rec("a", {0, 1}), rec("c", {5, 5})};
  const auto nn = nearest_neighbors("q", rs, 2);
  REQUIRE(nn.size() == 2);
  CHECK(nn[0].id == "a");
  CHECK(nn[1].id == "b");
  CHECK_THROWS(nearest_neighbors("missing", rs, 1));
  CHECK_THROWS(nearest_neighbors("q", rs, 4));
}

TEST_CASE("nearest neighbour distances are sorted for random clouds") {
  Rng rng(4);
  std::vector<LatentRecord> rs;
  for (int i = 0; i < 40; ++i) rs.push_back(rec("r" + std::to_string(i), {rng.normal(), rng.normal(), rng.normal()}));
  for (Metric m : {Metric::Euclidean, Metric::Cosine}) {
    const auto nn = nearest_neighbors("r7", rs, 39, m);
    for (std::size_t i = 0; i + 1 < nn.size(); ++i) CHECK(nn[i].distance <= nn[i + 1].distance);
  }
}

TEST_CASE("latent TSV round trip is exact") {
  testutil::TempDir d("lat");
  const std::vector<LatentRecord> rs{rec("p0", {0.1, -1.0 / 3.0}), rec("r0", {1e-300, 2.5}, Role::Response)};
  write_latents_tsv(d / "l.tsv", rs);
  const auto back = read_latents_tsv(d / "l.tsv");
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back[i].id == rs[i].id);
    CHECK(back[i].role == rs[i].role);
    CHECK(back[i].text == rs[i].text);
    CHECK(back[i].vector == rs[i].vector);
  }
}

TEST_CASE("pairing test on codes: identical views pair perfectly, unrelated ones near chance") {
  Rng rng(5);
  const Matrix x = testutil::random_matrix(200, 4, rng);
  const PairingReport same = pairing_test(x, x, 200, 1);
  CHECK(same.matched_closer_rate == 1.0);
  CHECK(same.median_gold_rank == 1.0);
  CHECK(same.matched_mean_dist == 0.0);
  const Matrix y = testutil::random_matrix(200, 4, rng);
  const PairingReport rnd = pairing_test(x, y, 2000, 1);
  CHECK(rnd.matched_closer_rate == doctest::Approx(0.5).epsilon(0.1));
}

TEST_CASE("export encodes prompts with X and responses with Y, skipping empty text") {
  const DialogueModel model = small_model();
  const Vocabulary vocab({"<pad>", "<unk>", "<bos>", "<eos>", "a", "b", "c", "d", "e", "f"});
  const ExportResult r = export_latents(model, vocab, {{"a b", Role::Prompt, "p"}, {"", Role::Prompt, ""},
                                                       {"c d", Role::Response, ""}});
  REQUIRE(r.records.size() == 2);
  CHECK(r.skipped == 1);
  CHECK(r.records[0].id == "p");
  CHECK(r.records[0].vector.size() == 3);
  const Matrix x = encode_prompts(model, {vocab.encode({"a", "b"})});
  for (std::size_t c = 0; c < 3; ++c) CHECK(r.records[0].vector[c] == x(0, c));
  const Matrix y = encode_responses(model, {vocab.encode({"c", "d"})});
  for (std::size_t c = 0; c < 3; ++c) CHECK(r.records[1].vector[c] == y(0, c));
}

TEST_CASE("encoding in chunks matches one-at-a-time encoding") {
  const DialogueModel model = small_model();
  Rng rng(6);
  std::vector<TokenSeq> seqs;
  for (int i = 0; i < 150; ++i) {
    TokenSeq s;
    for (std::size_t t = 0, n = 1 + rng.below(5); t < n; ++t) s.push_back(4 + rng.below(6));
    seqs.push_back(s);
  }
  const Matrix all = encode_prompts(model, seqs);
  for (int i : {0, 63, 64, 149}) {
    const Matrix one = encode_prompts(model, {seqs[i]});
    for (std::size_t c = 0; c < 3; ++c) CHECK(all(i, c) == doctest::Approx(one(0, c)).epsilon(1e-13));
  }
}

TEST_CASE("reconstruction and separation reports are well formed on an untrained model") {
  const DialogueModel model = small_model();
  const std::vector<TokenizedPair> pairs{{{4}, {5, 6, kEosId}}, {{7}, {8, kEosId}}};
  const ReconstructionReport r = reconstruction_rate(model, pairs, 5);
  CHECK(r.total == 2);
  CHECK(r.rate >= 0.0);
  CHECK(r.rate <= 1.0);
  const std::vector<TemplateGroup> groups{{"c0", {{4, 5}}, {{6}, {7}}}, {"c1", {{8}}, {{9}}}};
  const SeparationReport s = generic_separation(model, groups, {{5, 5}});
  CHECK(s.templates == 2);
  CHECK(s.cluster_dist.size() == 2);
  CHECK(s.rate == doctest::Approx(s.separated / 2.0));
}
