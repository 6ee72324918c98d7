#pragma once

// Synthetic topic-mixture task shared by the pipeline tests and the
// acceptance runner. Each sentence mixes two of eight topics; gold
// similarity is the cosine between the two sentences' mixture vectors.

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "minidistill/corpus.hpp"
#include "minidistill/rng.hpp"

namespace synthetic {

inline constexpr std::size_t kTopics = 8;

inline const std::array<std::vector<std::string>, kTopics>& topic_words() {
  static const std::array<std::vector<std::string>, kTopics> words = {{
      {"river", "boat", "water", "fish", "bank", "shore", "stream", "lake"},
      {"engine", "wheel", "road", "car", "truck", "fuel", "driver", "brake"},
      {"bread", "cheese", "soup", "bake", "salt", "flour", "dinner", "spoon"},
      {"violin", "song", "drum", "choir", "tune", "piano", "melody", "chord"},
      {"planet", "star", "orbit", "comet", "moon", "galaxy", "rocket", "sky"},
      {"judge", "court", "law", "trial", "verdict", "lawyer", "appeal", "jury"},
      {"leaf", "tree", "forest", "root", "seed", "branch", "moss", "bark"},
      {"goal", "match", "team", "score", "coach", "league", "referee", "pitch"},
  }};
  return words;
}

inline const std::vector<std::string>& filler_words() {
  static const std::vector<std::string> words = {"the", "a", "of", "and", "with", "near"};
  return words;
}

struct Sentence {
  std::string text;
  std::array<double, kTopics> mixture{};
};

// 5 to 8 words: content words split between a primary and secondary topic,
// plus one filler word.
inline Sentence make_sentence(minidistill::Pcg32& rng) {
  const auto& topics = topic_words();
  Sentence s;
  const std::size_t primary = rng.below(kTopics);
  std::size_t secondary = rng.below(kTopics);
  const std::size_t content = 4 + rng.below(4);
  const std::size_t from_secondary = secondary == primary ? 0 : rng.below(static_cast<std::uint32_t>(content / 2 + 1));
  std::vector<std::string> words;
  for (std::size_t i = 0; i < content; ++i) {
    const std::size_t t = i < from_secondary ? secondary : primary;
    words.push_back(topics[t][rng.below(static_cast<std::uint32_t>(topics[t].size()))]);
    s.mixture[t] += 1.0;
  }
  words.push_back(filler_words()[rng.below(static_cast<std::uint32_t>(filler_words().size()))]);
  minidistill::shuffle(words.begin(), words.end(), rng);
  for (const auto& w : words) s.text += (s.text.empty() ? "" : " ") + w;
  return s;
}

inline double mixture_cosine(const Sentence& a, const Sentence& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t t = 0; t < kTopics; ++t) {
    ab += a.mixture[t] * b.mixture[t];
    aa += a.mixture[t] * a.mixture[t];
    bb += b.mixture[t] * b.mixture[t];
  }
  return ab / std::sqrt(aa * bb);
}

// Half the pairs share their primary topic so gold labels cover [0, 1].
inline std::vector<minidistill::ScoredPair> scored_pairs(std::size_t n, std::uint64_t seed) {
  minidistill::Pcg32 rng(seed);
  std::vector<minidistill::ScoredPair> out;
  while (out.size() < n) {
    const auto a = make_sentence(rng);
    auto b = make_sentence(rng);
    if (out.size() % 2 == 0) {
      for (int tries = 0; tries < 64 && mixture_cosine(a, b) < 0.5; ++tries) b = make_sentence(rng);
    }
    out.push_back({a.text, b.text, mixture_cosine(a, b)});
  }
  return out;
}

inline std::vector<minidistill::TripletExample> triplets(std::size_t n, std::uint64_t seed) {
  minidistill::Pcg32 rng(seed);
  std::vector<minidistill::TripletExample> out;
  while (out.size() < n) {
    const auto q = make_sentence(rng);
    auto p = make_sentence(rng), neg = make_sentence(rng);
    for (int tries = 0; tries < 256 && mixture_cosine(q, p) < 0.7; ++tries) p = make_sentence(rng);
    for (int tries = 0; tries < 256 && mixture_cosine(q, neg) > 0.2; ++tries) neg = make_sentence(rng);
    out.push_back({q.text, p.text, neg.text});
  }
  return out;
}

// Deterministic word-level remap into a second "language": every letter is
// shifted through a fixed permutation of the alphabet.
inline std::string remap(const std::string& text) {
  static const std::string cipher = "qwertyuiopasdfghjklzxcvbnm";
  std::string out = text;
  for (auto& ch : out)
    if (ch >= 'a' && ch <= 'z') ch = cipher[static_cast<std::size_t>(ch - 'a')];
  return out;
}

inline std::vector<minidistill::ParallelPair> parallel_pairs(std::size_t n, std::uint64_t seed) {
  minidistill::Pcg32 rng(seed);
  std::vector<minidistill::ParallelPair> out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto s = make_sentence(rng);
    out.push_back({s.text, remap(s.text), "xx"});
  }
  return out;
}

}  // namespace synthetic
