#include "ctxevo/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_map>

#include "ctxevo/errors.hpp"

namespace ctxevo {

CandidateContext random_context(const UnitPool& pool, std::size_t n_units,
                                Rng& rng) {
  if (n_units == 0) {
    throw UsageError("random_context: n_units must be positive");
  }
  if (n_units > pool.size()) {
    throw UsageError("random_context: n_units exceeds the pool size");
  }
  const auto indices = rng.sample_indices(pool.size(), n_units);
  std::vector<std::string> ids;
  ids.reserve(indices.size());
  for (const auto index : indices) ids.push_back(pool.at(index).id);
  return CandidateContext(std::move(ids), n_units);
}

CandidateContext full_context(const UnitPool& pool) {
  if (pool.empty()) {
    throw UsageError("full_context: pool is empty");
  }
  std::vector<std::string> ids;
  ids.reserve(pool.size());
  for (const auto& unit : pool.units()) ids.push_back(unit.id);
  return CandidateContext(std::move(ids), pool.size());
}

namespace {

std::string ascii_lower(std::string_view text) {
  std::string out(text);
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = char(c - 'A' + 'a');
  }
  return out;
}

std::vector<std::string> lower_tokens(std::string_view text,
                                      const Tokenizer& tok) {
  std::vector<std::string> out;
  for (const auto& span : tok.spans(text)) {
    out.push_back(ascii_lower(text.substr(span.begin, span.end - span.begin)));
  }
  return out;
}

void sort_ranked(std::vector<RankedDoc>& docs) {
  std::sort(docs.begin(), docs.end(), [](const RankedDoc& a,
                                         const RankedDoc& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });
}

}  // namespace

std::vector<RankedDoc> bm25_rank(const std::string& query,
                                 const UnitPool& pool, double k1, double b,
                                 const Tokenizer& tok) {
  if (pool.empty()) {
    throw UsageError("bm25_rank: pool is empty");
  }

  const auto query_terms = lower_tokens(query, tok);
  std::vector<RankedDoc> out;
  out.reserve(pool.size());
  for (const auto& unit : pool.units()) out.push_back({unit.id, 0.0});
  if (query_terms.empty()) return out;  // all-zero scores, pool order

  // Per-document term frequencies and lengths.
  const std::size_t n_docs = pool.size();
  std::vector<std::unordered_map<std::string, std::size_t>> tf(n_docs);
  std::vector<std::size_t> doc_len(n_docs);
  double total_len = 0.0;
  for (std::size_t d = 0; d < n_docs; ++d) {
    const auto terms = lower_tokens(pool.at(d).text, tok);
    doc_len[d] = terms.size();
    total_len += double(terms.size());
    for (const auto& term : terms) ++tf[d][term];
  }
  const double avg_len = total_len / double(n_docs);

  std::unordered_map<std::string, std::size_t> df;
  for (std::size_t d = 0; d < n_docs; ++d) {
    for (const auto& [term, count] : tf[d]) ++df[term];
  }

  for (std::size_t d = 0; d < n_docs; ++d) {
    double score = 0.0;
    for (const auto& term : query_terms) {
      const auto df_it = df.find(term);
      if (df_it == df.end()) continue;  // absent terms contribute 0
      const auto tf_it = tf[d].find(term);
      if (tf_it == tf[d].end()) continue;

      const double idf =
          std::log(1.0 + (double(n_docs) - double(df_it->second) + 0.5) /
                             (double(df_it->second) + 0.5));
      const double freq = double(tf_it->second);
      score += idf * (freq * (k1 + 1.0)) /
               (freq + k1 * (1.0 - b + b * double(doc_len[d]) / avg_len));
    }
    out[d].score = score;
  }
  sort_ranked(out);
  return out;
}

std::vector<RankedDoc> rrf_fuse(const std::vector<std::string>& ranking_a,
                                const std::vector<std::string>& ranking_b,
                                unsigned k_rrf) {
  if (k_rrf == 0) {
    throw UsageError("rrf_fuse: k_rrf must be positive");
  }
  std::map<std::string, double> scores;
  for (const auto* ranking : {&ranking_a, &ranking_b}) {
    for (std::size_t rank = 0; rank < ranking->size(); ++rank) {
      scores[(*ranking)[rank]] += 1.0 / (double(k_rrf) + double(rank + 1));
    }
  }
  std::vector<RankedDoc> out;
  out.reserve(scores.size());
  for (const auto& [id, score] : scores) out.push_back({id, score});
  sort_ranked(out);
  return out;
}

std::vector<RankedDoc> dense_rank(const std::string& query,
                                  const UnitPool& pool,
                                  EmbeddingBackend& backend) {
  if (pool.empty()) {
    throw UsageError("dense_rank: pool is empty");
  }
  std::vector<std::string> texts;
  texts.reserve(pool.size() + 1);
  texts.push_back(query);
  for (const auto& unit : pool.units()) texts.push_back(unit.text);

  const auto vectors = backend.embed(texts);
  const auto& q = vectors.front();
  const auto norm = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
  };
  const double qn = norm(q);

  std::vector<RankedDoc> out;
  out.reserve(pool.size());
  for (std::size_t d = 0; d < pool.size(); ++d) {
    const auto& v = vectors[d + 1];
    double dot = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) dot += q[i] * v[i];
    const double dn = norm(v);
    const double sim = (qn > 0.0 && dn > 0.0) ? dot / (qn * dn) : 0.0;
    out.push_back({pool.at(d).id, sim});
  }
  sort_ranked(out);
  return out;
}

RetrievalMethod retrieval_method_from_label(const std::string& label) {
  if (label == "bm25") return RetrievalMethod::Bm25;
  if (label == "dense") return RetrievalMethod::Dense;
  if (label == "hybrid") return RetrievalMethod::Hybrid;
  throw UsageError("unknown retrieval method: " + label);
}

CandidateContext retrieve_top_k(const std::string& query, const UnitPool& pool,
                                RetrievalMethod method, std::size_t k,
                                EmbeddingBackend* backend,
                                const Tokenizer& tok) {
  if (pool.empty()) {
    throw UsageError("retrieve_top_k: pool is empty");
  }
  if (k == 0) {
    throw UsageError("retrieve_top_k: k must be positive");
  }
  if ((method == RetrievalMethod::Dense ||
       method == RetrievalMethod::Hybrid) &&
      backend == nullptr) {
    throw UsageError("dense/hybrid retrieval requires an embedding backend");
  }

  std::vector<RankedDoc> ranked;
  switch (method) {
    case RetrievalMethod::Bm25:
      ranked = bm25_rank(query, pool, 1.2, 0.75, tok);
      break;
    case RetrievalMethod::Dense:
      ranked = dense_rank(query, pool, *backend);
      break;
    case RetrievalMethod::Hybrid: {
      const auto sparse = bm25_rank(query, pool, 1.2, 0.75, tok);
      const auto dense = dense_rank(query, pool, *backend);
      std::vector<std::string> sparse_ids, dense_ids;
      for (const auto& doc : sparse) sparse_ids.push_back(doc.id);
      for (const auto& doc : dense) dense_ids.push_back(doc.id);
      ranked = rrf_fuse(sparse_ids, dense_ids);
      break;
    }
  }

  const std::size_t take = std::min(k, pool.size());
  std::vector<std::string> ids;
  ids.reserve(take);
  for (std::size_t i = 0; i < take; ++i) ids.push_back(ranked[i].id);
  return CandidateContext(std::move(ids), take);
}

}  // namespace ctxevo
