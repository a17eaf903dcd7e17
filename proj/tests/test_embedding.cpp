#include <doctest.h>

#include <fstream>

#include "mixrag/embedding.hpp"
#include "mixrag/errors.hpp"
#include "support.hpp"

using namespace mixrag;
using testsupport::TempDir;

namespace {

double dot_oracle(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
  return s;
}

TextualGraph small_graph() {
  return TextualGraph({{0, "a"}, {1, "b"}, {2, "c"}, {3, "d"}}, {{0, "r"}}, {{0, 0, 1, {}}, {2, 0, 3, {}}});
}

}  // namespace

TEST_CASE("hash embedding is deterministic and unit norm") {
  HashEmbedder e(256, 7);
  CHECK(testsupport::values(e.embed("mushroom")) == testsupport::values(e.embed("mushroom")));
  for (const char* t : {"mushroom", "a cut peony", "x", "Décor 42 !!", "the the the"}) {
    auto v = e.embed(t);
    CHECK(std::abs(std::sqrt(dot_oracle(v, v)) - 1.0) <= 1e-12);
  }
  CHECK_THROWS_AS(e.embed(""), ParameterError);
  CHECK(testsupport::values(HashEmbedder(256, 8).embed("mushroom")) != testsupport::values(e.embed("mushroom")));
}

TEST_CASE("shared tokens raise cosine similarity") {
  HashEmbedder e(256, 7);
  auto a = e.embed("a cut peony");
  auto b = e.embed("the cut peony");
  auto c = e.embed("flying eagle");
  CHECK(dot_oracle(a, b) > dot_oracle(a, c));
}

TEST_CASE("unrelated texts are nearly orthogonal") {
  HashEmbedder e(256, 7);
  Rng rng(31);
  std::vector<Tensor> vecs;
  for (int i = 0; i < 1000; ++i) {
    std::string text;
    const auto words = 1 + rng.below(4);
    for (std::size_t w = 0; w < words; ++w) {
      if (w) text += ' ';
      const auto len = 3 + rng.below(6);
      for (std::size_t c = 0; c < len; ++c) text += static_cast<char>('a' + rng.below(26));
    }
    vecs.push_back(e.embed(text));
  }
  double s = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < vecs.size(); ++i)
    for (std::size_t j = i + 1; j < vecs.size(); ++j, ++pairs) s += dot_oracle(vecs[i], vecs[j]);
  const double mean = s / static_cast<double>(pairs);
  CHECK(mean > -0.1);
  CHECK(mean < 0.1);
}

TEST_CASE("tokenizer lowercases and splits on punctuation") {
  CHECK(tokenize("Hello, World-wide 42!") == std::vector<std::string>{"hello", "world", "wide", "42"});
}

TEST_CASE("embedding files round-trip bit-identically") {
  TempDir dir("emb");
  auto g = small_graph();
  auto table = embed_graph(HashEmbedder(4, 1), g);
  CHECK(table.dim() == 4);
  save_embeddings(table, dir / "all.emb");
  auto back = load_embeddings(dir / "all.emb", g);
  CHECK(back.dim() == 4);
  for (auto kind : {EmbeddingKind::node, EmbeddingKind::relation, EmbeddingKind::triple})
    CHECK(testsupport::values(back.matrix(kind)) == testsupport::values(table.matrix(kind)));

  // One file per kind works too.
  std::vector<std::filesystem::path> parts;
  for (auto kind : {EmbeddingKind::node, EmbeddingKind::relation, EmbeddingKind::triple}) {
    parts.push_back(dir / (std::string(kind_name(kind)) + ".emb"));
    save_embeddings(table, kind, parts.back());
  }
  auto split = load_embeddings(parts, g);
  CHECK(testsupport::values(split.nodes()) == testsupport::values(table.nodes()));
}

TEST_CASE("missing ids are coverage errors naming the id") {
  TempDir dir("emb");
  auto g = small_graph();
  std::ofstream(dir / "x.emb") << "dim=2 kind=node\n0 1 0\n1 0 1\n2 1 1\n"
                               << "dim=2 kind=relation\n0 1 0\n"
                               << "dim=2 kind=triple\n0 1 0\n1 0 1\n";
  try {
    load_embeddings(dir / "x.emb", g);
    FAIL("expected CoverageError");
  } catch (const CoverageError& e) {
    CHECK(std::string(e.what()).find('3') != std::string::npos);
  }
}

TEST_CASE("ragged rows are format errors") {
  TempDir dir("emb");
  auto g = small_graph();
  std::ofstream(dir / "x.emb") << "dim=2 kind=node\n0 1 0\n1 0 1 5\n2 1 1\n3 0 0\n";
  CHECK_THROWS_AS(load_embeddings(dir / "x.emb", g), FormatError);
}

TEST_CASE("table lookups cover every id") {
  auto g = small_graph();
  auto table = embed_graph(HashEmbedder(16, 3), g);
  for (EntityId v = 0; v < g.num_entities(); ++v) CHECK(table.node(v).numel() == 16);
  for (TripleId t = 0; t < g.num_triples(); ++t) {
    CHECK(table.triple(t).all_finite());
    CHECK(testsupport::values(table.triple(t)) == HashEmbedder(16, 3).embed_values(g.triple_text(t)));
  }
}

TEST_CASE("cosine of a zero vector is zero") {
  std::vector<double> z{0, 0}, a{1, 0};
  CHECK(cosine_similarity(z, a) == 0.0);
  CHECK(cosine_similarity(a, a) == doctest::Approx(1.0));
}
