#pragma once

// Training/evaluation data ingestion (tab-separated UTF-8 text) and
// multilingual document sampling with exponentially smoothed language weights.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "minidistill/error.hpp"
#include "minidistill/rng.hpp"

namespace minidistill {

struct LanguageCorpus {
  std::string lang_id;
  std::vector<std::string> documents;
};

struct SamplingConfig {
  double alpha = 0.7;
  std::uint64_t seed = 0;
};

struct ParallelPair {
  std::string source_text;
  std::string target_text;
  std::string target_lang = "xx";

  friend bool operator==(const ParallelPair&, const ParallelPair&) = default;
};

struct TripletExample {
  std::string query;
  std::string positive;
  std::string negative;

  friend bool operator==(const TripletExample&, const TripletExample&) = default;
};

struct ScoredPair {
  std::string text_a;
  std::string text_b;
  double gold = 0.0;  // in [0, 1]
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  constexpr std::string_view ws = " \t\r\n\f\v";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_tabs(std::string_view line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find('\t', start);
    if (pos == std::string_view::npos) {
      fields.emplace_back(line.substr(start));
      break;
    }
    fields.emplace_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return fields;
}

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  if (in.bad()) throw IoError("read failure on '" + path + "'");
  return lines;
}

// Calls fn(fields, line_number) for every non-blank line that has at least
// `min_fields` tab-separated fields, each of the first `min_fields` non-empty
// after trimming.
template <typename Fn>
void for_each_record(const std::string& path, std::size_t min_fields, Fn&& fn) {
  const auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::size_t lineno = i + 1;
    if (trim(lines[i]).empty()) continue;
    auto fields = split_tabs(lines[i]);
    if (fields.size() < min_fields) {
      throw ParseError(path, lineno,
                       "expected at least " + std::to_string(min_fields) +
                           " tab-separated fields, found " + std::to_string(fields.size()));
    }
    for (std::size_t f = 0; f < min_fields; ++f) {
      const auto t = trim(fields[f]);
      if (t.empty()) throw ParseError(path, lineno, "field " + std::to_string(f + 1) + " is empty");
      fields[f] = std::string(t);
    }
    fn(fields, lineno);
  }
}

}  // namespace detail

/// source \t target [\t lang]; lang defaults to "xx".
inline std::vector<ParallelPair> load_tsv_pairs(const std::string& path) {
  std::vector<ParallelPair> out;
  detail::for_each_record(path, 2, [&](std::vector<std::string>& f, std::size_t) {
    ParallelPair p{std::move(f[0]), std::move(f[1]), "xx"};
    if (f.size() >= 3) {
      const auto lang = detail::trim(f[2]);
      if (!lang.empty()) p.target_lang = std::string(lang);
    }
    out.push_back(std::move(p));
  });
  return out;
}

/// text_a \t text_b \t score, score in [0, 5]; stored as gold = score / 5.
inline std::vector<ScoredPair> load_scored_pairs(const std::string& path) {
  std::vector<ScoredPair> out;
  detail::for_each_record(path, 3, [&](std::vector<std::string>& f, std::size_t lineno) {
    double raw = 0.0;
    std::size_t consumed = 0;
    try {
      raw = std::stod(f[2], &consumed);
    } catch (const std::exception&) {
      throw ParseError(path, lineno, "score '" + f[2] + "' is not a number");
    }
    if (consumed != f[2].size() || !std::isfinite(raw)) {
      throw ParseError(path, lineno, "score '" + f[2] + "' is not a number");
    }
    if (raw < 0.0 || raw > 5.0) {
      throw ParseError(path, lineno, "score " + f[2] + " outside [0, 5]");
    }
    out.push_back({std::move(f[0]), std::move(f[1]), raw / 5.0});
  });
  return out;
}

inline std::vector<TripletExample> load_triplets(const std::string& path) {
  std::vector<TripletExample> out;
  detail::for_each_record(path, 3, [&](std::vector<std::string>& f, std::size_t) {
    out.push_back({std::move(f[0]), std::move(f[1]), std::move(f[2])});
  });
  return out;
}

/// One document per non-blank line.
inline LanguageCorpus load_corpus(const std::string& lang_id, const std::string& path) {
  if (lang_id.empty()) throw InvalidInput("language id must be non-empty");
  LanguageCorpus c{lang_id, {}};
  for (auto& line : detail::read_lines(path)) {
    if (!detail::trim(line).empty()) c.documents.push_back(std::move(line));
  }
  return c;
}

/// p_i = q_i^alpha / sum_j q_j^alpha with q_i = c_i / sum c.
inline std::map<std::string, double> smoothed_language_weights(
    const std::map<std::string, std::uint64_t>& counts, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw InvalidInput("alpha must lie in (0, 1]");
  long double total = 0;
  for (const auto& [lang, c] : counts) total += static_cast<long double>(c);
  if (total == 0) throw InvalidInput("all language counts are zero");

  std::map<std::string, double> weights;
  long double norm = 0;
  std::map<std::string, long double> raw;
  for (const auto& [lang, c] : counts) {
    const long double q = static_cast<long double>(c) / total;
    const long double w = c == 0 ? 0.0L : std::pow(q, static_cast<long double>(alpha));
    raw[lang] = w;
    norm += w;
  }
  for (const auto& [lang, w] : raw) weights[lang] = static_cast<double>(w / norm);
  return weights;
}

struct SampledDocument {
  std::string lang_id;
  std::string document;

  friend bool operator==(const SampledDocument&, const SampledDocument&) = default;
};

// Draws documents with replacement: language by smoothed weight, then a
// uniform document within it. Weights come from document counts. Holds its
// own generator; not safe to drive from several threads at once.
class CorpusSampler {
 public:
  CorpusSampler(const std::vector<LanguageCorpus>& corpora, const SamplingConfig& cfg)
      : corpora_(&corpora), rng_(cfg.seed) {
    std::map<std::string, std::uint64_t> counts;
    for (const auto& c : corpora) {
      if (c.lang_id.empty()) throw InvalidInput("language id must be non-empty");
      counts[c.lang_id] += c.documents.size();
    }
    bool any = false;
    for (const auto& [_, n] : counts) any = any || n > 0;
    if (!any) throw InvalidInput("all corpora are empty");
    weights_ = smoothed_language_weights(counts, cfg.alpha);

    // Cumulative table over corpora in input order. Corpora sharing a language
    // split that language's weight in proportion to their size.
    double acc = 0.0;
    for (std::size_t i = 0; i < corpora.size(); ++i) {
      const auto& c = corpora[i];
      if (c.documents.empty()) continue;
      const double share = weights_.at(c.lang_id) * static_cast<double>(c.documents.size()) /
                           static_cast<double>(counts.at(c.lang_id));
      acc += share;
      cumulative_.emplace_back(acc, i);
    }
  }

  const std::map<std::string, double>& weights() const { return weights_; }

  SampledDocument next() {
    const double u = rng_.uniform() * cumulative_.back().first;
    std::size_t pick = cumulative_.back().second;
    for (const auto& [edge, idx] : cumulative_) {
      if (u < edge) {
        pick = idx;
        break;
      }
    }
    const auto& c = (*corpora_)[pick];
    const auto doc = rng_.below(static_cast<std::uint32_t>(c.documents.size()));
    return {c.lang_id, c.documents[doc]};
  }

 private:
  const std::vector<LanguageCorpus>* corpora_;
  Pcg32 rng_;
  std::map<std::string, double> weights_;
  std::vector<std::pair<double, std::size_t>> cumulative_;
};

inline std::vector<SampledDocument> sample_corpus(const std::vector<LanguageCorpus>& corpora,
                                                  const SamplingConfig& cfg, std::size_t n) {
  CorpusSampler sampler(corpora, cfg);
  std::vector<SampledDocument> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(sampler.next());
  return out;
}

}  // namespace minidistill
