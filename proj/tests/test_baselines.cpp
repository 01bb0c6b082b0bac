#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "ctxevo/baselines.hpp"
#include "ctxevo/errors.hpp"
#include "helpers.hpp"

using namespace ctxevo;
using namespace ctxevo::testing;

namespace {

UnitPool pool_from_texts(const std::vector<std::string>& texts) {
  UnitPool pool;
  for (const auto& text : texts) {
    pool.add(ContextUnit::make(UnitKind::SourceText, text, {}));
  }
  return pool;
}

// Independent brute-force evaluation of the BM25 formula, term by term and
// document by document, kept free of the index-based implementation.
std::vector<RankedDoc> bm25_brute_force(const std::string& query,
                                        const UnitPool& pool, double k1,
                                        double b) {
  const Tokenizer tok;
  const auto lower = [](std::string s) {
    for (char& c : s) {
      if (c >= 'A' && c <= 'Z') c = char(c - 'A' + 'a');
    }
    return s;
  };
  const auto terms_of = [&](const std::string& text) {
    std::vector<std::string> out;
    for (const auto& span : tok.spans(text)) {
      out.push_back(lower(text.substr(span.begin, span.end - span.begin)));
    }
    return out;
  };

  const std::size_t n = pool.size();
  double avgdl = 0.0;
  std::vector<std::vector<std::string>> docs;
  for (const auto& unit : pool.units()) {
    docs.push_back(terms_of(unit.text));
    avgdl += double(docs.back().size());
  }
  avgdl /= double(n);

  const auto query_terms = terms_of(query);
  std::vector<RankedDoc> out;
  for (std::size_t d = 0; d < n; ++d) {
    double score = 0.0;
    for (const auto& term : query_terms) {
      std::size_t df = 0;
      for (const auto& doc : docs) {
        if (std::find(doc.begin(), doc.end(), term) != doc.end()) ++df;
      }
      if (df == 0) continue;
      const double tf =
          double(std::count(docs[d].begin(), docs[d].end(), term));
      if (tf == 0.0) continue;
      const double idf =
          std::log(1.0 + (double(n) - double(df) + 0.5) / (double(df) + 0.5));
      score += idf * (tf * (k1 + 1.0)) /
               (tf + k1 * (1.0 - b + b * double(docs[d].size()) / avgdl));
    }
    out.push_back({pool.at(d).id, score});
  }
  std::sort(out.begin(), out.end(), [](const RankedDoc& x, const RankedDoc& y) {
    if (x.score != y.score) return x.score > y.score;
    return x.id < y.id;
  });
  return out;
}

}  // namespace

TEST_CASE("random_context samples without replacement") {
  const UnitPool pool = make_pool(85);

  Rng rng(4);
  const auto ctx = random_context(pool, 10, rng);
  CHECK(ctx.size() == 10);
  std::set<std::string> unique(ctx.ids().begin(), ctx.ids().end());
  CHECK(unique.size() == 10);

  Rng rng2(4);
  CHECK(random_context(pool, 10, rng2).ids() == ctx.ids());

  Rng rng3(4);
  const auto whole = random_context(pool, 85, rng3);
  CHECK(std::set<std::string>(whole.ids().begin(), whole.ids().end()) ==
        std::set<std::string>(pool_ids(pool).begin(), pool_ids(pool).end()));

  Rng rng4(4);
  CHECK_THROWS_AS(random_context(pool, 86, rng4), UsageError);
}

TEST_CASE("full_context takes every unit in pool order") {
  const UnitPool pool = make_pool(60);
  const auto ctx = full_context(pool);
  CHECK(ctx.size() == 60);
  CHECK(ctx.ids() == pool_ids(pool));
  CHECK(assembled_token_count(ctx, pool) > 0);

  const UnitPool one = make_pool(1);
  CHECK(full_context(one).size() == 1);

  const UnitPool none;
  CHECK_THROWS_AS(full_context(none), UsageError);
}

TEST_CASE("bm25 ranks the worked example correctly") {
  const UnitPool pool =
      pool_from_texts({"the fox", "the dog", "fox dog fox"});
  const auto ranked = bm25_rank("fox", pool);
  REQUIRE(ranked.size() == 3);
  CHECK(ranked[0].id == pool.at(2).id);  // "fox dog fox"
  CHECK(ranked[1].id == pool.at(0).id);  // "the fox"
  CHECK(ranked[2].id == pool.at(1).id);  // "the dog"
  CHECK(ranked[2].score == 0.0);
  CHECK(ranked[0].score > ranked[1].score);
}

TEST_CASE("bm25 degenerate inputs") {
  const UnitPool pool =
      pool_from_texts({"alpha beta", "gamma delta", "epsilon"});

  SUBCASE("absent query terms contribute nothing") {
    const auto with = bm25_rank("alpha zzzz", pool);
    const auto without = bm25_rank("alpha", pool);
    REQUIRE(with.size() == without.size());
    for (std::size_t i = 0; i < with.size(); ++i) {
      CHECK(with[i].id == without[i].id);
      CHECK(with[i].score == doctest::Approx(without[i].score));
    }
  }

  SUBCASE("empty query keeps pool order with zero scores") {
    const auto ranked = bm25_rank("", pool);
    REQUIRE(ranked.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(ranked[i].id == pool.at(i).id);
      CHECK(ranked[i].score == 0.0);
    }
  }

  SUBCASE("single-document corpus ranks first regardless") {
    const UnitPool single = pool_from_texts({"just one doc"});
    const auto ranked = bm25_rank("anything", single);
    REQUIRE(ranked.size() == 1);
    CHECK(ranked[0].id == single.at(0).id);
  }
}

TEST_CASE("bm25 score decreases with document length at fixed tf") {
  const UnitPool pool = pool_from_texts(
      {"fox pad1", "fox pad1 pad2 pad3 pad4 pad5", "unrelated text here"});
  const auto ranked = bm25_rank("fox", pool);
  std::map<std::string, double> score;
  for (const auto& doc : ranked) score[doc.id] = doc.score;
  CHECK(score[pool.at(0).id] > score[pool.at(1).id]);
}

TEST_CASE("bm25 agrees with brute force on random corpora") {
  Rng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n_docs = 2 + rng.below(19);
    std::vector<std::string> texts;
    for (std::size_t d = 0; d < n_docs; ++d) {
      const std::size_t len = 1 + rng.below(50);
      std::string text;
      for (std::size_t i = 0; i < len; ++i) {
        if (i) text += ' ';
        text += "t" + std::to_string(rng.below(50));
      }
      // Guarantee distinct docs so ids do not collide.
      text += " doc" + std::to_string(d);
      texts.push_back(text);
    }
    const UnitPool pool = pool_from_texts(texts);

    std::string query;
    const std::size_t q_len = 1 + rng.below(5);
    for (std::size_t i = 0; i < q_len; ++i) {
      if (i) query += ' ';
      query += "t" + std::to_string(rng.below(50));
    }

    const auto fast = bm25_rank(query, pool);
    const auto brute = bm25_brute_force(query, pool, 1.2, 0.75);
    REQUIRE(fast.size() == brute.size());
    for (std::size_t i = 0; i < fast.size(); ++i) {
      CHECK(fast[i].id == brute[i].id);
      CHECK(fast[i].score == doctest::Approx(brute[i].score).epsilon(1e-12));
    }
  }
}

TEST_CASE("rrf fuses the worked example") {
  const auto fused = rrf_fuse({"d1", "d2", "d3"}, {"d3", "d1", "d2"}, 60);
  REQUIRE(fused.size() == 3);
  CHECK(fused[0].id == "d1");  // 1/61 + 1/62
  CHECK(fused[1].id == "d3");  // 1/63 + 1/61
  CHECK(fused[2].id == "d2");  // 1/62 + 1/63
  CHECK(fused[0].score == doctest::Approx(1.0 / 61 + 1.0 / 62));
}

TEST_CASE("rrf identities") {
  SUBCASE("identical rankings fuse to themselves") {
    const auto fused = rrf_fuse({"a", "b", "c"}, {"a", "b", "c"});
    CHECK(fused[0].id == "a");
    CHECK(fused[1].id == "b");
    CHECK(fused[2].id == "c");
  }

  SUBCASE("an item present only in one list scores exactly 1/(k+rank)") {
    const auto fused = rrf_fuse({"solo"}, {}, 60);
    REQUIRE(fused.size() == 1);
    CHECK(fused[0].score == doctest::Approx(1.0 / 61));
  }

  SUBCASE("consumes ranks only, not scores") {
    // Feeding the same orderings must give the same fusion no matter what
    // upstream scores produced them; ranks are the whole input.
    const std::vector<std::string> a{"x", "y", "z"}, b{"z", "x", "y"};
    const auto once = rrf_fuse(a, b);
    const auto again = rrf_fuse(a, b);
    REQUIRE(once.size() == again.size());
    for (std::size_t i = 0; i < once.size(); ++i) {
      CHECK(once[i].id == again[i].id);
    }
  }
}

TEST_CASE("retrieve_top_k across methods") {
  const UnitPool pool = make_pool(85);

  SUBCASE("bm25 top 10 of 85") {
    const auto ctx = retrieve_top_k("w003 w007", pool, RetrievalMethod::Bm25, 10);
    CHECK(ctx.size() == 10);
    // The two matching docs outrank everything else.
    const std::set<std::string> top2{ctx.ids()[0], ctx.ids()[1]};
    CHECK(top2 == std::set<std::string>{pool.at(3).id, pool.at(7).id});
  }

  SUBCASE("k beyond the pool takes the whole pool") {
    const auto ctx =
        retrieve_top_k("w001", pool, RetrievalMethod::Bm25, 200);
    CHECK(ctx.size() == 85);
  }

  SUBCASE("dense and hybrid need an embedding backend") {
    CHECK_THROWS_AS(retrieve_top_k("q", pool, RetrievalMethod::Dense, 5),
                    UsageError);
    CHECK_THROWS_AS(retrieve_top_k("q", pool, RetrievalMethod::Hybrid, 5),
                    UsageError);
  }

  SUBCASE("hybrid of two identical rankings preserves the bm25 order") {
    // An embedding backend that mirrors bm25: rank-aligned scores.
    class MirrorBackend : public EmbeddingBackend {
     public:
      explicit MirrorBackend(std::vector<std::string> order)
          : order_(std::move(order)) {}
      std::string id() const override { return "mirror"; }
      std::vector<std::vector<double>> embed(
          const std::vector<std::string>& texts) override {
        // First call embeds [query, docs...]; give the query vector {1,0}
        // and each doc a vector whose cosine against it decays with its
        // bm25 rank.
        std::vector<std::vector<double>> out;
        for (const auto& text : texts) {
          const auto it = std::find(order_.begin(), order_.end(), text);
          if (it == order_.end()) {
            out.push_back({1.0, 0.0});
          } else {
            const double rank = double(it - order_.begin());
            out.push_back({1.0, rank + 1.0});
          }
        }
        return out;
      }

     private:
      std::vector<std::string> order_;
    };

    const UnitPool small = pool_from_texts(
        {"apple pie", "apple apple tart", "banana split", "cherry apple"});
    const auto sparse = bm25_rank("apple", small);
    std::vector<std::string> doc_texts_by_rank;
    for (const auto& doc : sparse) {
      doc_texts_by_rank.push_back(small.find(doc.id)->text);
    }
    MirrorBackend mirror(doc_texts_by_rank);

    const auto dense = dense_rank("apple", small, mirror);
    REQUIRE(dense.size() == sparse.size());
    for (std::size_t i = 0; i < dense.size(); ++i) {
      CHECK(dense[i].id == sparse[i].id);
    }

    const auto hybrid = retrieve_top_k("apple", small,
                                       RetrievalMethod::Hybrid, 3, &mirror);
    for (std::size_t i = 0; i < hybrid.size(); ++i) {
      CHECK(hybrid.ids()[i] == sparse[i].id);
    }
  }
}

TEST_CASE("hash embeddings are deterministic with uniform dimension") {
  HashEmbeddingBackend backend(16);
  const auto vectors = backend.embed({"same text", "same text", "other"});
  REQUIRE(vectors.size() == 3);
  CHECK(vectors[0] == vectors[1]);
  CHECK(vectors[0] != vectors[2]);
  for (const auto& v : vectors) CHECK(v.size() == 16);
}
