#pragma once

#include <string>
#include <vector>

#include "ctxevo/genome.hpp"
#include "ctxevo/llm_client.hpp"
#include "ctxevo/rng.hpp"
#include "ctxevo/tokenizer.hpp"

namespace ctxevo {

// Uniform sample of n distinct units, without replacement.
CandidateContext random_context(const UnitPool& pool, std::size_t n_units,
                                Rng& rng);

// Every unit in pool order; the cap equals the pool size, so oversized
// contexts are representable (flagged by the caller's report, not here).
CandidateContext full_context(const UnitPool& pool);

struct RankedDoc {
  std::string id;
  double score = 0.0;
};

// Okapi BM25 over tokenized, ASCII-lowercased unit texts with the
// 0.5-smoothed idf ln(1 + (N - df + 0.5)/(df + 0.5)), term saturation k1,
// and length normalization b. Output is every unit, score descending with
// ties by id; a query with no tokens yields all-zero scores in pool order.
std::vector<RankedDoc> bm25_rank(const std::string& query,
                                 const UnitPool& pool, double k1 = 1.2,
                                 double b = 0.75, const Tokenizer& tok = {});

// Reciprocal rank fusion: score(d) = sum over rankings of
// 1 / (k_rrf + rank), 1-based ranks, absent entries contributing zero.
// Descending, ties by id.
std::vector<RankedDoc> rrf_fuse(const std::vector<std::string>& ranking_a,
                                const std::vector<std::string>& ranking_b,
                                unsigned k_rrf = 60);

// Cosine-similarity ranking over embeddings fetched from `backend`
// (query first, then all unit texts in pool order).
std::vector<RankedDoc> dense_rank(const std::string& query,
                                  const UnitPool& pool,
                                  EmbeddingBackend& backend);

enum class RetrievalMethod { Bm25, Dense, Hybrid };

RetrievalMethod retrieval_method_from_label(const std::string& label);

// Top k units under the chosen ranking; k is capped at the pool size.
// Dense and hybrid require an embedding backend.
CandidateContext retrieve_top_k(const std::string& query, const UnitPool& pool,
                                RetrievalMethod method, std::size_t k,
                                EmbeddingBackend* backend = nullptr,
                                const Tokenizer& tok = {});

}  // namespace ctxevo
