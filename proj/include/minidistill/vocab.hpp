#pragma once

// Wordpiece vocabulary: pair-merge trainer, greedy longest-match tokenizer and
// the one-token-per-line vocabulary file.

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "minidistill/error.hpp"

namespace minidistill {

using TokenId = std::uint32_t;

inline constexpr std::array<std::string_view, 5> kSpecialTokens = {"[PAD]", "[UNK]", "[CLS]",
                                                                   "[SEP]", "[MASK]"};
inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kUnkId = 1;
inline constexpr TokenId kClsId = 2;
inline constexpr TokenId kSepId = 3;
inline constexpr TokenId kMaskId = 4;
inline constexpr std::string_view kContinuationPrefix = "##";

struct TokenizerConfig {
  bool lowercase = true;
  std::size_t max_chars_per_word = 100;
};

namespace utf8 {

/// Byte offsets of every code point start, plus the total length at the end.
/// Invalid lead bytes are treated as single-byte code points.
inline std::vector<std::size_t> boundaries(std::string_view s) {
  std::vector<std::size_t> out;
  std::size_t i = 0;
  while (i < s.size()) {
    out.push_back(i);
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 1;
    if (c >= 0xF0 && c < 0xF8) len = 4;
    else if (c >= 0xE0) len = 3;
    else if (c >= 0xC0) len = 2;
    if (i + len > s.size()) len = 1;
    for (std::size_t k = 1; k < len; ++k) {
      if ((static_cast<unsigned char>(s[i + k]) & 0xC0) != 0x80) {
        len = 1;
        break;
      }
    }
    i += len;
  }
  out.push_back(s.size());
  return out;
}

inline char32_t decode(std::string_view s) {
  const auto c0 = static_cast<unsigned char>(s[0]);
  if (s.size() == 1) return c0;
  if (s.size() == 2) return ((c0 & 0x1F) << 6) | (static_cast<unsigned char>(s[1]) & 0x3F);
  if (s.size() == 3) {
    return ((c0 & 0x0F) << 12) | ((static_cast<unsigned char>(s[1]) & 0x3F) << 6) |
           (static_cast<unsigned char>(s[2]) & 0x3F);
  }
  return ((c0 & 0x07) << 18) | ((static_cast<unsigned char>(s[1]) & 0x3F) << 12) |
         ((static_cast<unsigned char>(s[2]) & 0x3F) << 6) | (static_cast<unsigned char>(s[3]) & 0x3F);
}

inline void encode(char32_t cp, std::string& out) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

// Simple one-to-one lowercase mapping for ASCII, Latin-1, Latin Extended-A,
// Greek and Cyrillic. Other scripts pass through unchanged.
inline char32_t to_lower(char32_t c) {
  if (c >= U'A' && c <= U'Z') return c + 32;
  if (c < 0x80) return c;
  if (c >= 0xC0 && c <= 0xDE && c != 0xD7) return c + 32;
  if (c >= 0x100 && c <= 0x17F) {
    if (c == 0x130) return U'i';
    if (c == 0x178) return 0xFF;
    const bool even_upper = (c <= 0x137 && c != 0x131) || (c >= 0x14A && c <= 0x177);
    const bool odd_upper = (c >= 0x139 && c <= 0x148) || (c >= 0x179 && c <= 0x17E);
    if (even_upper && c % 2 == 0) return c + 1;
    if (odd_upper && c % 2 == 1) return c + 1;
    return c;
  }
  if (c >= 0x391 && c <= 0x3A9 && c != 0x3A2) return c + 32;
  if (c >= 0x410 && c <= 0x42F) return c + 32;
  if (c >= 0x400 && c <= 0x40F) return c + 80;
  return c;
}

inline std::string lowercase(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  const auto b = boundaries(s);
  for (std::size_t i = 0; i + 1 < b.size(); ++i) {
    const auto piece = s.substr(b[i], b[i + 1] - b[i]);
    const auto cp = decode(piece);
    const auto lower = to_lower(cp);
    if (lower == cp) {
      out.append(piece);
    } else {
      encode(lower, out);
    }
  }
  return out;
}

}  // namespace utf8

/// Splits on ASCII whitespace; applies lowercasing when configured.
inline std::vector<std::string> split_words(std::string_view text, const TokenizerConfig& cfg) {
  std::vector<std::string> words;
  std::size_t i = 0;
  auto is_space = [](char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
  };
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    const std::size_t start = i;
    while (i < text.size() && !is_space(text[i])) ++i;
    if (i > start) {
      const auto w = text.substr(start, i - start);
      words.push_back(cfg.lowercase ? utf8::lowercase(w) : std::string(w));
    }
  }
  return words;
}

class Vocabulary {
 public:
  /// Specials only.
  Vocabulary() : Vocabulary(std::vector<std::string>(kSpecialTokens.begin(), kSpecialTokens.end())) {}

  /// `tokens` must start with the five specials in order and be duplicate-free.
  explicit Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    if (tokens_.size() < kSpecialTokens.size()) {
      throw InvalidInput("vocabulary must start with the five special tokens");
    }
    for (std::size_t i = 0; i < kSpecialTokens.size(); ++i) {
      if (tokens_[i] != kSpecialTokens[i]) {
        throw InvalidInput("vocabulary id " + std::to_string(i) + " must be " +
                           std::string(kSpecialTokens[i]) + ", found '" + tokens_[i] + "'");
      }
    }
    id_of_.reserve(tokens_.size());
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      const auto& t = tokens_[i];
      if (t.empty()) throw InvalidInput("empty token at id " + std::to_string(i));
      if (t.find_first_of("\n\r") != std::string::npos) {
        throw InvalidInput("token at id " + std::to_string(i) + " contains a line break");
      }
      if (!id_of_.emplace(t, static_cast<TokenId>(i)).second) {
        throw InvalidInput("duplicate token '" + t + "'");
      }
    }
  }

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::string& token(TokenId id) const { return tokens_.at(id); }

  std::optional<TokenId> find(std::string_view token) const {
    const auto it = id_of_.find(std::string(token));
    if (it == id_of_.end()) return std::nullopt;
    return it->second;
  }

  bool contains(std::string_view token) const { return find(token).has_value(); }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> id_of_;
};

namespace detail {

struct PairKey {
  std::string left;
  std::string right;
  auto operator<=>(const PairKey&) const = default;
};

inline std::string merged_piece(const std::string& left, const std::string& right) {
  std::string out = left;
  out.append(right, right.starts_with(kContinuationPrefix) ? kContinuationPrefix.size() : 0);
  return out;
}

}  // namespace detail

// Trains a wordpiece vocabulary.
//
// Layout of the result: specials, the plain single-character alphabet (every
// character seen >= min_frequency times, sorted), continuation characters
// "##c" (characters seen >= min_frequency times in non-initial position,
// most frequent first), then learned pieces in merge order. A vocabulary
// trained with a smaller target_size on the same stream is therefore a
// prefix of one trained with a larger target_size.
//
// target_size must hold the specials plus the plain alphabet. When it cannot
// also hold every continuation character, the rarest ones are left out and no
// merges are learned.
//
// Merges repeatedly join the adjacent pair maximising
// count(ab) / (count(a) * count(b)); ties go to the lexicographically smaller
// merged string. Pairs seen fewer than min_frequency times are not merged.
inline Vocabulary train_wordpiece(const std::vector<std::string>& documents, std::size_t target_size,
                                  std::size_t min_frequency, const TokenizerConfig& cfg = {}) {
  if (min_frequency < 1) throw InvalidInput("min_frequency must be >= 1");
  if (cfg.max_chars_per_word < 1) throw InvalidInput("max_chars_per_word must be >= 1");

  std::map<std::string, std::uint64_t> word_counts;
  for (const auto& doc : documents) {
    for (auto& w : split_words(doc, cfg)) ++word_counts[std::move(w)];
  }
  if (word_counts.empty()) throw InvalidInput("document stream contains no words");

  // Words as code-point pieces; words over the length limit always map to
  // [UNK] so they take no part in training.
  struct Word {
    std::vector<std::string> pieces;
    std::uint64_t count;
  };
  std::vector<Word> words;
  std::map<std::string, std::uint64_t> plain_counts;
  std::map<std::string, std::uint64_t> cont_counts;
  for (const auto& [w, count] : word_counts) {
    const auto b = utf8::boundaries(w);
    if (b.size() - 1 > cfg.max_chars_per_word) continue;
    Word word{{}, count};
    for (std::size_t i = 0; i + 1 < b.size(); ++i) {
      const auto ch = w.substr(b[i], b[i + 1] - b[i]);
      plain_counts[ch] += count;
      if (i == 0) {
        word.pieces.push_back(ch);
      } else {
        cont_counts[ch] += count;
        word.pieces.push_back(std::string(kContinuationPrefix) + ch);
      }
    }
    words.push_back(std::move(word));
  }

  std::vector<std::string> tokens(kSpecialTokens.begin(), kSpecialTokens.end());
  for (const auto& [ch, n] : plain_counts) {
    if (n >= min_frequency) tokens.push_back(ch);
  }
  if (tokens.size() > target_size) {
    throw InvalidInput("target size " + std::to_string(target_size) + " cannot hold the " +
                       std::to_string(tokens.size() - kSpecialTokens.size()) +
                       "-character alphabet plus specials (need " + std::to_string(tokens.size()) + ")");
  }

  std::vector<std::pair<std::string, std::uint64_t>> cont;
  for (const auto& [ch, n] : cont_counts) {
    if (n >= min_frequency) cont.emplace_back(std::string(kContinuationPrefix) + ch, n);
  }
  std::stable_sort(cont.begin(), cont.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  const bool alphabet_complete = tokens.size() + cont.size() <= target_size;
  for (const auto& [piece, _] : cont) {
    if (tokens.size() >= target_size) break;
    tokens.push_back(piece);
  }
  if (!alphabet_complete) return Vocabulary(std::move(tokens));

  std::unordered_map<std::string, bool> in_vocab;
  for (const auto& t : tokens) in_vocab[t] = true;

  // Drop words containing characters outside the alphabet.
  std::erase_if(words, [&](const Word& w) {
    return std::any_of(w.pieces.begin(), w.pieces.end(),
                       [&](const std::string& p) { return !in_vocab.contains(p); });
  });

  while (tokens.size() < target_size) {
    std::map<std::string, std::uint64_t> piece_counts;
    std::map<detail::PairKey, std::uint64_t> pair_counts;
    for (const auto& w : words) {
      for (std::size_t i = 0; i < w.pieces.size(); ++i) {
        piece_counts[w.pieces[i]] += w.count;
        if (i + 1 < w.pieces.size()) pair_counts[{w.pieces[i], w.pieces[i + 1]}] += w.count;
      }
    }

    const detail::PairKey* best = nullptr;
    std::uint64_t best_pair = 0, best_denom = 1;
    std::string best_merged;
    for (const auto& [key, pc] : pair_counts) {
      if (pc < min_frequency) continue;
      const std::uint64_t denom = piece_counts[key.left] * piece_counts[key.right];
      auto merged = detail::merged_piece(key.left, key.right);
      bool better = best == nullptr;
      if (!better) {
        // pc / denom vs best_pair / best_denom, exactly.
        const auto lhs = static_cast<unsigned __int128>(pc) * best_denom;
        const auto rhs = static_cast<unsigned __int128>(best_pair) * denom;
        better = lhs > rhs || (lhs == rhs && merged < best_merged);
      }
      if (better) {
        best = &key;
        best_pair = pc;
        best_denom = denom;
        best_merged = std::move(merged);
      }
    }
    if (best == nullptr) break;

    const detail::PairKey chosen = *best;
    for (auto& w : words) {
      std::vector<std::string> next;
      next.reserve(w.pieces.size());
      for (std::size_t i = 0; i < w.pieces.size(); ++i) {
        if (i + 1 < w.pieces.size() && w.pieces[i] == chosen.left && w.pieces[i + 1] == chosen.right) {
          next.push_back(best_merged);
          ++i;
        } else {
          next.push_back(std::move(w.pieces[i]));
        }
      }
      w.pieces = std::move(next);
    }
    if (!in_vocab.contains(best_merged)) {
      in_vocab[best_merged] = true;
      tokens.push_back(best_merged);
    }
  }
  return Vocabulary(std::move(tokens));
}

/// Greedy longest-prefix wordpiece decomposition of one (already normalised) word.
inline void tokenize_word(const Vocabulary& v, const TokenizerConfig& cfg, std::string_view word,
                          std::vector<TokenId>& out) {
  const auto b = utf8::boundaries(word);
  const std::size_t n = b.size() - 1;
  if (n > cfg.max_chars_per_word) {
    out.push_back(kUnkId);
    return;
  }
  const std::size_t mark = out.size();
  std::size_t start = 0;
  std::string candidate;
  while (start < n) {
    std::optional<TokenId> found;
    std::size_t end = n;
    for (; end > start; --end) {
      candidate.clear();
      if (start > 0) candidate.append(kContinuationPrefix);
      candidate.append(word.substr(b[start], b[end] - b[start]));
      found = v.find(candidate);
      if (found) break;
    }
    if (!found) {
      out.resize(mark);
      out.push_back(kUnkId);
      return;
    }
    out.push_back(*found);
    start = end;
  }
}

inline std::vector<TokenId> tokenize(const Vocabulary& v, const TokenizerConfig& cfg, std::string_view text) {
  std::vector<TokenId> ids;
  for (const auto& w : split_words(text, cfg)) tokenize_word(v, cfg, w, ids);
  return ids;
}

/// Best-effort inverse of tokenize: continuation pieces are glued to the previous piece.
inline std::string detokenize(const Vocabulary& v, const std::vector<TokenId>& ids) {
  std::string out;
  for (const auto id : ids) {
    const auto& t = v.token(id);
    if (t.starts_with(kContinuationPrefix) && t.size() > kContinuationPrefix.size()) {
      out.append(t, kContinuationPrefix.size());
    } else {
      if (!out.empty()) out.push_back(' ');
      out.append(t);
    }
  }
  return out;
}

/// Fraction of emitted ids equal to [UNK].
inline double unk_rate(const Vocabulary& v, const TokenizerConfig& cfg,
                       const std::vector<std::string>& documents) {
  if (documents.empty()) throw InvalidInput("unk_rate needs at least one document");
  std::size_t total = 0, unk = 0;
  std::vector<TokenId> ids;
  for (const auto& d : documents) {
    ids.clear();
    for (const auto& w : split_words(d, cfg)) tokenize_word(v, cfg, w, ids);
    total += ids.size();
    unk += static_cast<std::size_t>(std::count(ids.begin(), ids.end(), kUnkId));
  }
  if (total == 0) throw InvalidInput("documents produced no tokens");
  return static_cast<double>(unk) / static_cast<double>(total);
}

/// One token per line, "\n"-terminated; line number (0-based) is the id.
inline void save_vocabulary(const Vocabulary& v, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  for (const auto& t : v.tokens()) out << t << '\n';
  if (!out) throw IoError("write failure on '" + path + "'");
}

inline Vocabulary load_vocabulary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) tokens.push_back(line);
  try {
    return Vocabulary(std::move(tokens));
  } catch (const InvalidInput& e) {
    throw ParseError(path + ": " + e.what(), 0);
  }
}

}  // namespace minidistill
