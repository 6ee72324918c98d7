#include <gtest/gtest.h>

#include <cmath>

#include "minidistill/pipeline.hpp"
#include "synthetic.hpp"

using namespace minidistill;

namespace {

ModelConfig small_config(std::size_t vocab_size, std::size_t d = 16, std::size_t layers = 1) {
  ModelConfig c;
  c.num_layers = layers;
  c.hidden_dim = d;
  c.num_heads = 2;
  c.ffn_dim = 2 * d;
  c.max_seq_len = 16;
  c.vocab_size = vocab_size;
  return c;
}

SentenceEncoder make_encoder(const std::vector<std::string>& texts, std::uint64_t seed, std::size_t d = 16) {
  auto vocab = train_wordpiece(texts, 400, 1);
  auto model = init_model(small_config(vocab.size(), d), seed);
  return {std::move(model), std::move(vocab), {}};
}

std::vector<std::string> texts_of(const std::vector<ScoredPair>& pairs) {
  std::vector<std::string> out;
  for (const auto& p : pairs) {
    out.push_back(p.text_a);
    out.push_back(p.text_b);
  }
  return out;
}

DistillConfig fast_config(std::size_t epochs) {
  DistillConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = 16;
  cfg.peak_lr = 3e-3;
  cfg.seed = 5;
  return cfg;
}

}  // namespace

TEST(DistillConfig, DefaultsAndValidation) {
  const DistillConfig cfg;
  EXPECT_EQ(cfg.epochs, 20u);
  EXPECT_EQ(cfg.batch_size, 128u);
  EXPECT_EQ(cfg.peak_lr, 2e-5);
  EXPECT_EQ(cfg.warmup_fraction, 0.1);
  EXPECT_EQ(cfg.total_steps(300), 20u * 3u);
  EXPECT_EQ(cfg.total_steps(256), 20u * 2u);
  DistillConfig bad;
  bad.epochs = 0;
  EXPECT_THROW(bad.validate(), InvalidInput);
  bad = {};
  bad.batch_size = 0;
  EXPECT_THROW(bad.validate(), InvalidInput);
  bad = {};
  bad.warmup_fraction = 1.5;
  EXPECT_THROW(bad.validate(), InvalidInput);
}

TEST(TrainTeacherSemantic, LossHalvesOnSyntheticFixture) {
  const auto data = synthetic::scored_pairs(64, 1);
  auto enc = make_encoder(texts_of(data), 2);
  const auto h = train_teacher_semantic(enc, data, fast_config(15));
  ASSERT_EQ(h.epoch_mean_loss.size(), 15u);
  EXPECT_EQ(h.steps, 15u * 4u);
  for (double l : h.epoch_mean_loss) EXPECT_TRUE(std::isfinite(l));
  EXPECT_LT(h.epoch_mean_loss.back(), 0.5 * h.epoch_mean_loss.front());
}

TEST(TrainTeacherSemantic, DeterministicPerSeed) {
  const auto data = synthetic::scored_pairs(20, 3);
  auto a = make_encoder(texts_of(data), 4);
  auto b = a;
  const auto ha = train_teacher_semantic(a, data, fast_config(2));
  const auto hb = train_teacher_semantic(b, data, fast_config(2));
  EXPECT_EQ(ha.epoch_mean_loss, hb.epoch_mean_loss);
  EXPECT_EQ(a.model, b.model);
  auto c = make_encoder(texts_of(data), 4);
  auto other = fast_config(2);
  other.seed = 6;
  other.batch_size = 7;
  EXPECT_NE(train_teacher_semantic(c, data, other).epoch_mean_loss, ha.epoch_mean_loss);
}

TEST(TrainTeacherSemantic, Errors) {
  const auto data = synthetic::scored_pairs(4, 3);
  auto enc = make_encoder(texts_of(data), 4);
  auto cfg = fast_config(1);
  cfg.epochs = 0;
  EXPECT_THROW(train_teacher_semantic(enc, data, cfg), InvalidInput);
  EXPECT_THROW(train_teacher_semantic(enc, {}, fast_config(1)), InvalidInput);
}

TEST(TrainTeacherRelevance, IdenticalPositiveAndNegativeGivesConstantMargin) {
  auto data = synthetic::triplets(12, 9);
  for (auto& t : data) t.negative = t.positive;
  std::vector<std::string> texts;
  for (const auto& t : data) texts.insert(texts.end(), {t.query, t.positive});
  auto enc = make_encoder(texts, 1);
  auto cfg = fast_config(3);
  cfg.triplet_margin = 0.75;
  const auto h = train_teacher_relevance(enc, data, cfg);
  for (double l : h.epoch_mean_loss) EXPECT_DOUBLE_EQ(l, 0.75);
}

TEST(TrainTeacherRelevance, HeldOutMarginGrows) {
  const auto train = synthetic::triplets(96, 10);
  const auto held = synthetic::triplets(40, 11);
  std::vector<std::string> texts;
  for (const auto* set : {&train, &held})
    for (const auto& t : *set) texts.insert(texts.end(), {t.query, t.positive, t.negative});
  auto enc = make_encoder(texts, 2);
  auto margin = [&] {
    double s = 0.0;
    for (const auto& t : held) {
      const auto q = enc.embed(t.query), p = enc.embed(t.positive), n = enc.embed(t.negative);
      double dp = 0, dn = 0;
      for (std::size_t i = 0; i < q.dim(); ++i) {
        dp += (q[i] - p[i]) * (q[i] - p[i]);
        dn += (q[i] - n[i]) * (q[i] - n[i]);
      }
      s += std::sqrt(dn) - std::sqrt(dp);
    }
    return s / static_cast<double>(held.size());
  };
  const double before = margin();
  const auto h = train_teacher_relevance(enc, train, fast_config(8));
  const double after = margin();
  EXPECT_GT(after, before);
  EXPECT_LT(h.epoch_mean_loss.back(), h.epoch_mean_loss.front());

  auto again = make_encoder(texts, 2);
  EXPECT_EQ(train_teacher_relevance(again, train, fast_config(8)).epoch_mean_loss, h.epoch_mean_loss);
}

TEST(EmbeddingCache, InsertFindAndDimension) {
  EmbeddingCache cache(2);
  cache.insert("a", {1, 2});
  EXPECT_EQ(cache.at("a"), (EmbeddingVector{1, 2}));
  EXPECT_EQ(cache.find("b"), nullptr);
  EXPECT_THROW(cache.insert("c", {1, 2, 3}), InvalidInput);
  try {
    cache.at("missing sentence");
    FAIL();
  } catch (const InvalidInput& e) {
    EXPECT_NE(std::string(e.what()).find("missing sentence"), std::string::npos);
  }
}

TEST(CacheTeacherEmbeddings, RawAndProjected) {
  const auto data = synthetic::scored_pairs(30, 12);
  const auto texts = texts_of(data);
  const auto teacher = make_encoder(texts, 3, 8);
  EXPECT_THROW(cache_teacher_embeddings(teacher, std::nullopt, {}), InvalidInput);

  std::vector<std::string> with_dupes = {texts[0], texts[1], texts[0]};
  const auto raw = cache_teacher_embeddings(teacher, std::nullopt, with_dupes);
  EXPECT_EQ(raw.size(), 2u);
  EXPECT_EQ(raw.dim(), 8u);
  EXPECT_EQ(raw.at(texts[1]), teacher.embed(texts[1]));

  // Full-rank projection: centred rotation, so distances survive.
  const auto x = teacher_embedding_matrix(teacher, texts);
  const auto pca = fit_pca(x, 8);
  const auto projected = cache_teacher_embeddings(teacher, pca, texts);
  EXPECT_EQ(projected.dim(), 8u);
  for (std::size_t i = 0; i + 1 < 10; ++i) {
    const auto va = teacher.embed(texts[i]), vb = teacher.embed(texts[i + 1]);
    const auto& pa = projected.at(texts[i]);
    const auto& pb = projected.at(texts[i + 1]);
    double raw_d = 0, proj_d = 0;
    for (std::size_t c = 0; c < 8; ++c) {
      raw_d += (va[c] - vb[c]) * (va[c] - vb[c]);
      proj_d += (pa[c] - pb[c]) * (pa[c] - pb[c]);
    }
    EXPECT_NEAR(proj_d, raw_d, 1e-9 * std::max(1.0, raw_d));
    EXPECT_EQ(pa, project(pca, va));
  }
  const auto reduced = cache_teacher_embeddings(teacher, fit_pca(x, 3), texts);
  EXPECT_EQ(reduced.dim(), 3u);
}

TEST(DistillStudent, ZeroLossAtOptimumLeavesParametersUnchanged) {
  const auto pairs_src = synthetic::parallel_pairs(10, 13);
  std::vector<ParallelPair> pairs;
  std::vector<std::string> texts;
  for (const auto& p : pairs_src) {
    pairs.push_back({p.source_text, p.source_text, "xx"});
    texts.push_back(p.source_text);
  }
  auto student = make_encoder(texts, 4, 8);
  EmbeddingCache cache(8);
  for (const auto& t : texts) cache.insert(t, student.embed(t));
  const auto before = student.model;
  const auto h = distill_student(student, cache, pairs, fast_config(2));
  for (double l : h.epoch_mean_loss) EXPECT_EQ(l, 0.0);
  EXPECT_EQ(student.model, before);
}

TEST(DistillStudent, ReducesLossDeterministically) {
  const auto pairs = synthetic::parallel_pairs(80, 14);
  std::vector<std::string> src, all;
  for (const auto& p : pairs) {
    src.push_back(p.source_text);
    all.insert(all.end(), {p.source_text, p.target_text});
  }
  const auto teacher = make_encoder(src, 5, 16);
  const auto pca = fit_pca(teacher_embedding_matrix(teacher, src), 8);
  const auto cache = cache_teacher_embeddings(teacher, pca, src);
  auto student = make_encoder(all, 6, 8);
  auto twin = student;
  const auto h = distill_student(student, cache, pairs, fast_config(10));
  EXPECT_LT(h.epoch_mean_loss.back(), h.epoch_mean_loss.front());
  EXPECT_EQ(distill_student(twin, cache, pairs, fast_config(10)).epoch_mean_loss, h.epoch_mean_loss);
}

TEST(DistillStudent, Errors) {
  const auto pairs = synthetic::parallel_pairs(4, 15);
  std::vector<std::string> all;
  for (const auto& p : pairs) all.insert(all.end(), {p.source_text, p.target_text});
  auto student = make_encoder(all, 7, 8);
  EXPECT_THROW(distill_student(student, EmbeddingCache(4), pairs, fast_config(1)), InvalidInput);
  EmbeddingCache partial(8);
  partial.insert(pairs[0].source_text, EmbeddingVector(8));
  try {
    distill_student(student, partial, pairs, fast_config(1));
    FAIL();
  } catch (const InvalidInput& e) {
    EXPECT_NE(std::string(e.what()).find(pairs[1].source_text), std::string::npos);
  }
}
