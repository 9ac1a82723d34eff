#include "doctest.h"

#include <fstream>
#include <set>

#include "helpers.hpp"
#include "latentdial/data.hpp"
#include "latentdial/rng.hpp"

using namespace latentdial;

TEST_CASE("split and join tokens") {
  CHECK(split_tokens("  how are  you \r") == std::vector<std::string>{"how", "are", "you"});
  CHECK(split_tokens("").empty());
  CHECK(join_tokens({"a", "b"}) == "a b");
}

TEST_CASE("vocabulary reserves special ids and maps unknown words to unk") {
  const Vocabulary v({"<pad>", "<unk>", "<bos>", "<eos>", "hello", "world"});
  CHECK(v.id("<pad>") == kPadId);
  CHECK(v.id("<eos>") == kEosId);
  CHECK(v.id("hello") == 4);
  CHECK(v.id("never") == kUnkId);
  CHECK(v.encode({"world", "x"}) == TokenSeq{5, kUnkId});
  CHECK(v.decode({kBosId, 4, 5, kEosId, kPadId}) == std::vector<std::string>{"hello", "world"});
  CHECK_THROWS(v.token(99));
  CHECK_THROWS_AS(Vocabulary({"a", "b"}), std::invalid_argument);
  CHECK_THROWS_AS(Vocabulary({"<pad>", "<unk>", "<bos>", "<eos>", "a", "a"}), std::invalid_argument);
}

TEST_CASE("vocabulary save/load round trip keeps the hash") {
  testutil::TempDir dir("vocab");
  const Vocabulary v({"<pad>", "<unk>", "<bos>", "<eos>", "x", "y"});
  v.save(dir / "v.txt");
  const Vocabulary w = Vocabulary::load(dir / "v.txt");
  CHECK(w.tokens() == v.tokens());
  CHECK(w.hash() == v.hash());
  CHECK(Vocabulary({"<pad>", "<unk>", "<bos>", "<eos>", "y", "x"}).hash() != v.hash());
}

TEST_CASE("build_vocab orders by frequency then lexicographically and honours min_freq") {
  const std::vector<RawPair> pairs{{{"b", "a"}, {"c", "a"}}, {{"b"}, {"d", "a"}}};
  const Vocabulary v = build_vocab(pairs, 1);
  CHECK(v.tokens() == std::vector<std::string>{"<pad>", "<unk>", "<bos>", "<eos>", "a", "b", "c", "d"});
  const Vocabulary v2 = build_vocab(pairs, 2);
  CHECK(v2.tokens() == std::vector<std::string>{"<pad>", "<unk>", "<bos>", "<eos>", "a", "b"});
  CHECK_THROWS_AS(build_vocab({}, 1), std::invalid_argument);
}

TEST_CASE("pair parsing skips malformed lines and reports them") {
  const auto r = parse_pairs("hi there\thello\nno tab here\n\na\tb\tc\n\tonly response\nok\tfine\r\n");
  REQUIRE(r.raw.size() == 2);
  CHECK(r.raw[0].prompt == std::vector<std::string>{"hi", "there"});
  CHECK(r.raw[1].response == std::vector<std::string>{"fine"});
  CHECK(r.skipped == 3);
  CHECK(r.skipped_lines == std::vector<std::size_t>{2, 4, 5});
  CHECK_THROWS_AS(read_pair_file("/nonexistent/pairs.tsv"), std::runtime_error);
}

TEST_CASE("tokenized responses are eos-terminated") {
  const Vocabulary v({"<pad>", "<unk>", "<bos>", "<eos>", "a"});
  const auto t = tokenize_pairs({{{"a"}, {"a", "zz"}}}, v);
  CHECK(t[0].response == TokenSeq{4, kUnkId, kEosId});
  CHECK(t[0].prompt == TokenSeq{4});
}

TEST_CASE("dedup_filter removes only exact pair duplicates") {
  const std::vector<TokenizedPair> train{{{4}, {5, kEosId}}, {{6}, {7, kEosId}}};
  const std::vector<TokenizedPair> eval{{{4}, {5, kEosId}}, {{4}, {7, kEosId}}, {{8}, {5, kEosId}}};
  const auto kept = dedup_filter(train, eval);
  CHECK(kept.size() == 2);
  CHECK(kept[0] == eval[1]);
}

TEST_CASE("collate pads and records lengths") {
  const std::vector<TokenizedPair> pairs{{{4, 5, 6}, {7, kEosId}}, {{4}, {8, 9, 10, kEosId}}};
  const Batch b = collate(pairs, {1, 0});
  CHECK(b.m == 2);
  CHECK(b.prompt_width == 3);
  CHECK(b.response_width == 4);
  CHECK(b.prompt_lengths == std::vector<std::size_t>{1, 3});
  CHECK(b.response_lengths == std::vector<std::size_t>{4, 2});
  CHECK(b.prompt_at(0, 1) == kPadId);
  CHECK(b.response_at(1, 1) == kEosId);
  CHECK(b.noised_responses == b.responses);
  CHECK(b.source_index == std::vector<std::size_t>{1, 0});
}

TEST_CASE("make_batches covers every pair once and is a function of the seed") {
  std::vector<TokenizedPair> pairs;
  for (int i = 0; i < 23; ++i) pairs.push_back({{TokenId(4 + i)}, {TokenId(4 + i), kEosId}});
  const auto a = make_batches(pairs, {5, false}, 42);
  const auto b = make_batches(pairs, {5, false}, 42);
  const auto c = make_batches(pairs, {5, false}, 43);
  std::multiset<std::size_t> seen;
  for (const auto& batch : a) seen.insert(batch.source_index.begin(), batch.source_index.end());
  CHECK(seen.size() == 23);
  CHECK(std::set<std::size_t>(seen.begin(), seen.end()).size() == 23);
  CHECK(a.size() == 5);
  CHECK(a.back().m == 3);
  CHECK(a[0].source_index == b[0].source_index);
  CHECK(a[0].source_index != c[0].source_index);
  CHECK(make_batches(pairs, {5, true}, 42).size() == 4);
  CHECK_THROWS_AS(make_batches(pairs, {1, false}, 1), std::invalid_argument);
}

TEST_CASE("denoising replaces only word tokens with unk at about the requested rate") {
  Rng rng(5);
  TokenSeq seq;
  for (int i = 0; i < 20000; ++i) seq.push_back(4 + i % 50);
  seq.push_back(kEosId);
  const TokenSeq out = apply_denoising(seq, 0.15, rng);
  std::size_t replaced = 0;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (out[i] != seq[i]) {
      CHECK(out[i] == kUnkId);
      ++replaced;
    }
  }
  CHECK(out.back() == kEosId);
  CHECK(static_cast<double>(replaced) / 20000 == doctest::Approx(0.15).epsilon(0.1));
  Rng r2(5);
  CHECK(apply_denoising(seq, 0.0, r2) == seq);
  CHECK_THROWS_AS(apply_denoising(seq, 1.5, r2), std::invalid_argument);
}

TEST_CASE("batch denoising leaves clean responses and padding alone") {
  const std::vector<TokenizedPair> pairs{{{4}, {5, 6, 7, kEosId}}, {{4}, {8, kEosId}}};
  Batch b = collate(pairs, {0, 1});
  Rng rng(1);
  apply_denoising(b, 1.0, rng);
  for (std::size_t i = 0; i < b.responses.size(); ++i) {
    const TokenId t = b.responses[i];
    CHECK(b.noised_responses[i] == (is_special(t) ? t : kUnkId));
  }
}

TEST_CASE("derived seeds differ by purpose and index and are stable") {
  CHECK(derive_seed(1, "batching", 0) != derive_seed(1, "batching", 1));
  CHECK(derive_seed(1, "batching") != derive_seed(1, "denoise"));
  CHECK(derive_seed(7, "x", 3) == derive_seed(7, "x", 3));
  Rng a(3), b(3);
  for (int i = 0; i < 10; ++i) CHECK(a.next() == b.next());
}
