#pragma once

// Evaluation: Spearman rank correlation on scored pairs, binary-relevance
// ranking metrics (MRR@k, NDCG@k, MAP@k), cosine ranking of documents and
// report writers.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "minidistill/corpus.hpp"
#include "minidistill/error.hpp"
#include "minidistill/pipeline.hpp"

namespace minidistill {

struct EvalReport {
  std::string metric;
  double value = 0.0;
  std::size_t n_examples = 0;
  std::string model_id;
};

using Ranking = std::vector<std::string>;              // doc ids, best first
using Rankings = std::map<std::string, Ranking>;       // query id -> ranking
using Qrels = std::map<std::string, std::set<std::string>>;  // query id -> relevant doc ids

/// 1-based ranks; tied values share the mean of the ranks they span.
inline std::vector<double> fractional_ranks(const std::vector<double>& xs) {
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(xs.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && xs[order[j + 1]] == xs[order[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = avg;
    i = j + 1;
  }
  return ranks;
}

inline double pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw InvalidInput("correlation of a constant sequence is undefined");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

inline double spearman_rho(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size()) throw InvalidInput("spearman_rho: length mismatch");
  if (xs.size() < 2) throw InvalidInput("spearman_rho: need at least 2 values");
  return pearson(fractional_ranks(xs), fractional_ranks(ys));
}

/// Spearman rho x 100 between cosine(a, b) and gold labels.
inline EvalReport evaluate_sts(const SentenceEncoder& encoder, const std::vector<ScoredPair>& pairs,
                               const std::string& model_id = "") {
  if (pairs.size() < 2) throw InvalidInput("evaluate_sts: need at least 2 pairs");
  std::vector<double> predicted, gold;
  for (const auto& p : pairs) {
    predicted.push_back(cosine_similarity(encoder.embed(p.text_a), encoder.embed(p.text_b)));
    gold.push_back(p.gold);
  }
  return {"spearman_x100", 100.0 * spearman_rho(predicted, gold), pairs.size(), model_id};
}

struct ScoredIndex {
  std::size_t index;
  double score;
};

/// Descending cosine to `query`; ties by ascending index.
inline std::vector<ScoredIndex> rank_by_embedding(const EmbeddingVector& query,
                                                  const std::vector<EmbeddingVector>& docs) {
  if (docs.empty()) throw InvalidInput("rank_documents: no documents");
  std::vector<ScoredIndex> scored;
  scored.reserve(docs.size());
  for (std::size_t i = 0; i < docs.size(); ++i) scored.push_back({i, cosine_similarity(query, docs[i])});
  std::stable_sort(scored.begin(), scored.end(),
                   [](const ScoredIndex& a, const ScoredIndex& b) { return a.score > b.score; });
  return scored;
}

inline std::vector<ScoredIndex> rank_documents_scored(const SentenceEncoder& encoder, const std::string& query,
                                                      const std::vector<std::string>& docs) {
  if (docs.empty()) throw InvalidInput("rank_documents: no documents");
  std::vector<EmbeddingVector> doc_vecs;
  doc_vecs.reserve(docs.size());
  for (const auto& d : docs) doc_vecs.push_back(encoder.embed(d));
  return rank_by_embedding(encoder.embed(query), doc_vecs);
}

inline std::vector<std::size_t> rank_documents(const SentenceEncoder& encoder, const std::string& query,
                                               const std::vector<std::string>& docs) {
  std::vector<std::size_t> out;
  for (const auto& s : rank_documents_scored(encoder, query, docs)) out.push_back(s.index);
  return out;
}

namespace detail {

template <typename PerQuery>
double mean_over_queries(const Rankings& rankings, const Qrels& qrels, std::size_t k, PerQuery&& fn) {
  if (rankings.empty()) throw InvalidInput("ranking metric: no queries");
  if (k < 1) throw InvalidInput("ranking metric: k must be >= 1");
  static const std::set<std::string> kNone;
  double total = 0.0;
  for (const auto& [qid, ranking] : rankings) {
    const auto it = qrels.find(qid);
    total += fn(ranking, it == qrels.end() ? kNone : it->second);
  }
  return total / static_cast<double>(rankings.size());
}

}  // namespace detail

inline double mrr_at_k(const Rankings& rankings, const Qrels& qrels, std::size_t k) {
  return detail::mean_over_queries(rankings, qrels, k, [k](const Ranking& r, const std::set<std::string>& rel) {
    const std::size_t depth = std::min(k, r.size());
    for (std::size_t i = 0; i < depth; ++i) {
      if (rel.contains(r[i])) return 1.0 / static_cast<double>(i + 1);
    }
    return 0.0;
  });
}

/// Binary gains, log2(rank + 1) discount, normalised by the ideal DCG.
inline double ndcg_at_k(const Rankings& rankings, const Qrels& qrels, std::size_t k) {
  return detail::mean_over_queries(rankings, qrels, k, [k](const Ranking& r, const std::set<std::string>& rel) {
    if (rel.empty()) return 0.0;
    double dcg = 0.0, ideal = 0.0;
    for (std::size_t i = 0; i < std::min(k, r.size()); ++i) {
      if (rel.contains(r[i])) dcg += 1.0 / std::log2(static_cast<double>(i + 2));
    }
    for (std::size_t i = 0; i < std::min(k, rel.size()); ++i) ideal += 1.0 / std::log2(static_cast<double>(i + 2));
    return dcg / ideal;
  });
}

/// Average precision over the top k, normalised by min(k, |relevant|).
inline double map_at_k(const Rankings& rankings, const Qrels& qrels, std::size_t k) {
  return detail::mean_over_queries(rankings, qrels, k, [k](const Ranking& r, const std::set<std::string>& rel) {
    if (rel.empty()) return 0.0;
    double sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < std::min(k, r.size()); ++i) {
      if (rel.contains(r[i])) {
        ++hits;
        sum += static_cast<double>(hits) / static_cast<double>(i + 1);
      }
    }
    return sum / static_cast<double>(std::min(k, rel.size()));
  });
}

struct IdText {
  std::string id;
  std::string text;
};

/// id \t text per line.
inline std::vector<IdText> load_id_text(const std::string& path) {
  std::vector<IdText> out;
  detail::for_each_record(path, 2, [&](std::vector<std::string>& f, std::size_t) {
    out.push_back({std::move(f[0]), std::move(f[1])});
  });
  return out;
}

/// query_id \t doc_id per line.
inline Qrels load_qrels(const std::string& path) {
  Qrels q;
  detail::for_each_record(path, 2, [&](std::vector<std::string>& f, std::size_t) { q[f[0]].insert(f[1]); });
  return q;
}

/// Ranks the whole corpus for every query; reports MRR@k, NDCG@k and MAP@100.
inline std::vector<EvalReport> evaluate_retrieval(const SentenceEncoder& encoder, const std::vector<IdText>& queries,
                                                  const std::vector<IdText>& corpus, const Qrels& qrels,
                                                  std::size_t k = 10, const std::string& model_id = "") {
  if (queries.empty()) throw InvalidInput("evaluate_retrieval: no queries");
  if (corpus.empty()) throw InvalidInput("evaluate_retrieval: empty corpus");
  std::set<std::string> doc_ids;
  for (const auto& d : corpus) {
    if (!doc_ids.insert(d.id).second) throw InvalidInput("evaluate_retrieval: duplicate doc id '" + d.id + "'");
  }
  for (const auto& [qid, rel] : qrels) {
    for (const auto& doc : rel) {
      if (!doc_ids.contains(doc)) {
        throw InvalidInput("qrels for query '" + qid + "' reference unknown doc '" + doc + "'");
      }
    }
  }

  std::vector<EmbeddingVector> doc_vecs;
  doc_vecs.reserve(corpus.size());
  for (const auto& d : corpus) doc_vecs.push_back(encoder.embed(d.text));

  Rankings rankings;
  for (const auto& q : queries) {
    Ranking r;
    for (const auto& s : rank_by_embedding(encoder.embed(q.text), doc_vecs)) r.push_back(corpus[s.index].id);
    if (!rankings.emplace(q.id, std::move(r)).second) {
      throw InvalidInput("evaluate_retrieval: duplicate query id '" + q.id + "'");
    }
  }
  const auto n = queries.size();
  return {
      {"mrr@" + std::to_string(k), mrr_at_k(rankings, qrels, k), n, model_id},
      {"ndcg@" + std::to_string(k), ndcg_at_k(rankings, qrels, k), n, model_id},
      {"map@100", map_at_k(rankings, qrels, 100), n, model_id},
  };
}

/// metric=value lines, one report per line.
inline std::string format_reports(const std::vector<EvalReport>& reports) {
  std::string out;
  char buf[64];
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, "%.6f", r.value);
    out += "metric=" + r.metric + " value=" + buf + " n=" + std::to_string(r.n_examples) + " model_id=" +
           r.model_id + "\n";
  }
  return out;
}

/// JSON array of {"metric", "value", "n", "model_id"} objects.
inline nlohmann::json reports_to_json(const std::vector<EvalReport>& reports) {
  auto arr = nlohmann::json::array();
  for (const auto& r : reports) {
    arr.push_back({{"metric", r.metric}, {"value", r.value}, {"n", r.n_examples}, {"model_id", r.model_id}});
  }
  return arr;
}

inline void write_reports(const std::vector<EvalReport>& reports, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << reports_to_json(reports).dump(2) << '\n';
  if (!out) throw IoError("write failure on '" + path + "'");
}

}  // namespace minidistill
