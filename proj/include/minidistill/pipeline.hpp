#pragma once

// Training drivers: semantic teacher (cosine regression to gold labels),
// relevance teacher (triplet loss), teacher embedding cache with optional PCA
// head, and student distillation on parallel pairs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "minidistill/corpus.hpp"
#include "minidistill/error.hpp"
#include "minidistill/losses.hpp"
#include "minidistill/model.hpp"
#include "minidistill/optim.hpp"
#include "minidistill/pca.hpp"
#include "minidistill/rng.hpp"
#include "minidistill/vocab.hpp"

namespace minidistill {

/// A model together with the vocabulary it reads.
struct SentenceEncoder {
  EncoderModel model;
  Vocabulary vocab;
  TokenizerConfig tokenizer;

  std::vector<TokenId> token_ids(std::string_view text) const {
    auto ids = tokenize(vocab, tokenizer, text);
    if (ids.empty()) throw InvalidInput("text produced no tokens: '" + std::string(text) + "'");
    return ids;
  }

  EmbeddingVector embed(std::string_view text) const { return minidistill::embed(model, token_ids(text)); }

  EncodeResult encode_for_training(std::string_view text) const {
    return encode(model, token_ids(text), true);
  }
};

struct DistillConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 128;
  double peak_lr = 2e-5;
  double warmup_fraction = 0.1;
  std::uint64_t seed = 0;
  double triplet_margin = 1.0;  // relevance teacher only

  void validate() const {
    if (epochs < 1) throw InvalidInput("epochs must be >= 1");
    if (batch_size < 1) throw InvalidInput("batch_size must be >= 1");
    if (!(peak_lr > 0.0)) throw InvalidInput("peak_lr must be > 0");
    if (!(warmup_fraction > 0.0 && warmup_fraction <= 1.0)) throw InvalidInput("warmup_fraction must lie in (0, 1]");
    if (!(triplet_margin > 0.0)) throw InvalidInput("triplet_margin must be > 0");
  }

  std::size_t total_steps(std::size_t examples) const {
    return epochs * ((examples + batch_size - 1) / batch_size);
  }
};

struct TrainingHistory {
  std::vector<double> epoch_mean_loss;  // mean per-example loss of each epoch
  std::size_t steps = 0;
};

namespace detail {

// Runs epochs x batches of Adam with linear warmup. `batch_loss(indices, grads)`
// must add the gradient of the batch loss into `grads` (zeroed beforehand)
// and return the batch loss. Batches are formed from a permutation seeded
// with seed + epoch; the last partial batch is kept.
template <typename BatchLoss>
TrainingHistory run_training(EncoderModel& model, std::size_t examples, const DistillConfig& cfg,
                             BatchLoss&& batch_loss) {
  cfg.validate();
  if (examples == 0) throw InvalidInput("training data is empty");
  ScheduleConfig schedule{cfg.peak_lr, cfg.warmup_fraction, cfg.total_steps(examples)};
  AdamState adam;
  auto grads = ModelGradients::zeros(model.config);
  auto params = model.parameters();
  const auto grad_views = std::as_const(grads).parameters();

  TrainingHistory history;
  std::vector<std::size_t> order(examples);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Pcg32 rng(cfg.seed + epoch);
    shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < examples; start += cfg.batch_size) {
      const std::size_t end = std::min(examples, start + cfg.batch_size);
      const std::span<const std::size_t> batch(order.data() + start, end - start);
      for (auto* g : grads.parameters()) g->fill(0.0);
      const double loss = batch_loss(batch, grads);
      if (!std::isfinite(loss)) throw std::runtime_error("training loss became non-finite");
      epoch_loss += loss * static_cast<double>(batch.size());
      adam_step(params, grad_views, adam, warmup_lr(history.steps, schedule));
      ++history.steps;
    }
    history.epoch_mean_loss.push_back(epoch_loss / static_cast<double>(examples));
  }
  return history;
}

inline EmbeddingVector scaled(const EmbeddingVector& v, double s) {
  EmbeddingVector out = v;
  for (auto& x : out.values) x *= s;
  return out;
}

}  // namespace detail

/// Siamese cosine regression: mean over the batch of (cos(a, b) - gold)^2.
inline TrainingHistory train_teacher_semantic(SentenceEncoder& encoder, const std::vector<ScoredPair>& data,
                                              const DistillConfig& cfg) {
  auto& model = encoder.model;
  return detail::run_training(model, data.size(), cfg, [&](std::span<const std::size_t> batch, ModelGradients& g) {
    const double inv = 1.0 / static_cast<double>(batch.size());
    double loss = 0.0;
    for (const auto idx : batch) {
      const auto& ex = data[idx];
      auto a = encoder.encode_for_training(ex.text_a);
      auto b = encoder.encode_for_training(ex.text_b);
      const auto r = cosine_regression_loss(a.embedding, b.embedding, ex.gold);
      loss += r.loss;
      backward_accumulate(model, *a.tape, detail::scaled(r.grad_a, inv), g);
      backward_accumulate(model, *b.tape, detail::scaled(r.grad_b, inv), g);
    }
    return loss * inv;
  });
}

/// Siamese triplet loss; query, positive and negative share one model.
inline TrainingHistory train_teacher_relevance(SentenceEncoder& encoder, const std::vector<TripletExample>& data,
                                               const DistillConfig& cfg) {
  auto& model = encoder.model;
  const TripletConfig triplet{cfg.triplet_margin};
  return detail::run_training(model, data.size(), cfg, [&](std::span<const std::size_t> batch, ModelGradients& g) {
    const double inv = 1.0 / static_cast<double>(batch.size());
    double loss = 0.0;
    for (const auto idx : batch) {
      const auto& ex = data[idx];
      auto q = encoder.encode_for_training(ex.query);
      auto p = encoder.encode_for_training(ex.positive);
      auto n = encoder.encode_for_training(ex.negative);
      const auto r = triplet_loss(q.embedding, p.embedding, n.embedding, triplet);
      loss += r.loss;
      if (r.loss == 0.0) continue;
      backward_accumulate(model, *q.tape, detail::scaled(r.grad_query, inv), g);
      backward_accumulate(model, *p.tape, detail::scaled(r.grad_positive, inv), g);
      backward_accumulate(model, *n.tape, detail::scaled(r.grad_negative, inv), g);
    }
    return loss * inv;
  });
}

/// Exact-string map from sentence to (optionally projected) teacher embedding.
class EmbeddingCache {
 public:
  EmbeddingCache() = default;
  explicit EmbeddingCache(std::size_t dim) : dim_(dim) {}

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return entries_.size(); }
  const std::map<std::string, EmbeddingVector>& entries() const { return entries_; }

  void insert(const std::string& sentence, EmbeddingVector v) {
    if (v.dim() != dim_) {
      throw InvalidInput("embedding cache: dimension " + std::to_string(v.dim()) + " != " + std::to_string(dim_));
    }
    entries_.insert_or_assign(sentence, std::move(v));
  }

  const EmbeddingVector* find(const std::string& sentence) const {
    const auto it = entries_.find(sentence);
    return it == entries_.end() ? nullptr : &it->second;
  }

  const EmbeddingVector& at(const std::string& sentence) const {
    const auto* v = find(sentence);
    if (!v) throw InvalidInput("embedding cache has no entry for '" + sentence + "'");
    return *v;
  }

  friend bool operator==(const EmbeddingCache&, const EmbeddingCache&) = default;

 private:
  std::size_t dim_ = 0;
  std::map<std::string, EmbeddingVector> entries_;
};

inline EmbeddingCache cache_teacher_embeddings(const SentenceEncoder& teacher,
                                               const std::optional<PcaProjection>& projection,
                                               const std::vector<std::string>& sentences) {
  if (sentences.empty()) throw InvalidInput("cache_teacher_embeddings: no sentences");
  if (projection && projection->input_dim() != teacher.model.config.hidden_dim) {
    throw InvalidInput("cache_teacher_embeddings: projection input dimension does not match teacher");
  }
  EmbeddingCache cache(projection ? projection->output_dim() : teacher.model.config.hidden_dim);
  for (const auto& s : sentences) {
    if (cache.find(s)) continue;
    auto v = teacher.embed(s);
    cache.insert(s, projection ? project(*projection, v) : std::move(v));
  }
  return cache;
}

/// Teacher embeddings of `sentences` as rows, for fitting a projection.
inline Matrix teacher_embedding_matrix(const SentenceEncoder& teacher, const std::vector<std::string>& sentences) {
  Matrix out(sentences.size(), teacher.model.config.hidden_dim);
  for (std::size_t r = 0; r < sentences.size(); ++r) {
    const auto v = teacher.embed(sentences[r]);
    std::copy(v.begin(), v.end(), out.row(r).begin());
  }
  return out;
}

// Trains the student so that both its source and target encodings match the
// cached teacher embedding of the source sentence. Only source-side teacher
// embeddings are read.
inline TrainingHistory distill_student(SentenceEncoder& student, const EmbeddingCache& cache,
                                       const std::vector<ParallelPair>& pairs, const DistillConfig& cfg) {
  if (student.model.config.hidden_dim != cache.dim()) {
    throw InvalidInput("distill_student: student hidden_dim " + std::to_string(student.model.config.hidden_dim) +
                       " != cache dimension " + std::to_string(cache.dim()));
  }
  for (const auto& p : pairs) cache.at(p.source_text);

  auto& model = student.model;
  std::vector<DistillItem> items;
  std::vector<EncodeResult> source_enc, target_enc;
  return detail::run_training(model, pairs.size(), cfg, [&](std::span<const std::size_t> batch, ModelGradients& g) {
    items.clear();
    source_enc.clear();
    target_enc.clear();
    for (const auto idx : batch) {
      const auto& p = pairs[idx];
      source_enc.push_back(student.encode_for_training(p.source_text));
      target_enc.push_back(student.encode_for_training(p.target_text));
      items.push_back({source_enc.back().embedding, target_enc.back().embedding, cache.at(p.source_text)});
    }
    const auto r = distill_mse_batch(items);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      backward_accumulate(model, *source_enc[i].tape, r.grad_source[i], g);
      backward_accumulate(model, *target_enc[i].tape, r.grad_target[i], g);
    }
    return r.loss;
  });
}

}  // namespace minidistill
