#pragma once

// Binary containers for models (with optional PCA head and vocabulary) and
// embedding caches. All integers little-endian.
//
// Model container:
//   "MDST"  u8 version(=1)  u8 kind(0 teacher, 1 student)
//   u32 num_layers, hidden_dim, num_heads, ffn_dim, max_seq_len, vocab_size
//   u32 tensor_count, then per tensor in declaration order:
//     u32 name_len, name bytes, u32 rank, rank x u32 dims, f32 values (row-major)
//   u8 has_projection; if 1, three tensors as above:
//     "projection.mean" [d_in], "projection.components" [d_in, k],
//     "projection.explained_variance" [k]
//   u8 has_vocabulary; if 1:
//     u8 lowercase, u32 max_chars_per_word, u32 token_count,
//     per token: u32 len, bytes
//   u64 FNV-1a checksum of every preceding byte
//
// Embedding cache:
//   "MDEC"  u8 version(=1)  u32 dim  u64 count
//   per entry, sorted by sentence bytes: u32 len, bytes, dim x f64
//   u64 FNV-1a checksum of every preceding byte

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <string_view>
#include <unistd.h>
#include <vector>

#include "minidistill/error.hpp"
#include "minidistill/model.hpp"
#include "minidistill/pca.hpp"
#include "minidistill/pipeline.hpp"
#include "minidistill/vocab.hpp"

namespace minidistill {

static_assert(std::endian::native == std::endian::little, "container code assumes a little-endian host");

enum class ModelKind : std::uint8_t { kTeacher = 0, kStudent = 1 };

inline constexpr std::uint8_t kContainerVersion = 1;

struct ModelBundle {
  ModelKind kind = ModelKind::kTeacher;
  EncoderModel model;
  std::optional<PcaProjection> projection;
  std::optional<Vocabulary> vocab;
  TokenizerConfig tokenizer;

  SentenceEncoder encoder() const {
    if (!vocab) throw InvalidInput("model container carries no vocabulary");
    return {model, *vocab, tokenizer};
  }
};

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace detail {

class ByteWriter {
 public:
  template <typename T>
  void put(T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    bytes_.append(buf, sizeof(T));
  }
  void put_bytes(std::string_view s) { bytes_.append(s); }
  void put_string(std::string_view s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    put_bytes(s);
  }
  std::string finish() {
    put<std::uint64_t>(fnv1a64(bytes_));
    return std::move(bytes_);
  }

 private:
  std::string bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string_view get_bytes(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string get_string() { return std::string(get_bytes(get<std::uint32_t>())); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw IntegrityError("container truncated");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

inline void put_tensor(ByteWriter& w, const std::string& name, const Matrix& m, bool as_vector) {
  w.put_string(name);
  if (as_vector) {
    w.put<std::uint32_t>(1);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(m.size()));
  } else {
    w.put<std::uint32_t>(2);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(m.rows()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(m.cols()));
  }
  for (const double v : m.values()) w.put<float>(static_cast<float>(v));
}

// Reads one tensor record into `out`, which already has the expected shape.
inline void get_tensor(ByteReader& r, const std::string& expected_name, Matrix& out, bool as_vector) {
  const auto name = r.get_string();
  if (name != expected_name) throw IntegrityError("expected tensor '" + expected_name + "', found '" + name + "'");
  const auto rank = r.get<std::uint32_t>();
  std::vector<std::uint32_t> dims;
  for (std::uint32_t i = 0; i < rank && i < 8; ++i) dims.push_back(r.get<std::uint32_t>());
  const bool ok = as_vector ? (rank == 1 && dims[0] == out.size())
                            : (rank == 2 && dims[0] == out.rows() && dims[1] == out.cols());
  if (!ok) throw IntegrityError("tensor '" + name + "' has unexpected shape");
  for (auto& v : out.values()) {
    const float f = r.get<float>();
    if (!std::isfinite(f)) throw IntegrityError("tensor '" + name + "' holds a non-finite value");
    v = static_cast<double>(f);
  }
}

inline bool is_vector_param(const std::string& name) {
  const auto leaf = name.substr(name.rfind('.') + 1);
  return name.find('.') != std::string::npos && (leaf == "gain" || leaf.starts_with('b'));
}

inline void write_file_atomically(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + tmp + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw IoError("write failure on '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot move container into place at '" + path + "'");
  }
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failure on '" + path + "'");
  return bytes;
}

// Magic, version and checksum; returns a reader positioned after the version byte.
inline ByteReader open_container(std::string_view bytes, std::string_view magic) {
  if (bytes.size() < magic.size() + 1 + sizeof(std::uint64_t)) throw IntegrityError("container truncated");
  if (bytes.substr(0, magic.size()) != magic) throw IntegrityError("bad magic bytes");
  const auto version = static_cast<std::uint8_t>(bytes[magic.size()]);
  if (version != kContainerVersion) {
    throw VersionError("unsupported container version " + std::to_string(version));
  }
  const auto payload = bytes.substr(0, bytes.size() - sizeof(std::uint64_t));
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + payload.size(), sizeof stored);
  if (stored != fnv1a64(payload)) throw IntegrityError("checksum mismatch");
  ByteReader r(payload);
  r.get_bytes(magic.size() + 1);
  return r;
}

}  // namespace detail

inline std::string serialize_model(const ModelBundle& b) {
  b.model.check_shapes();
  detail::ByteWriter w;
  w.put_bytes("MDST");
  w.put<std::uint8_t>(kContainerVersion);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(b.kind));
  const auto& c = b.model.config;
  for (const auto v : {c.num_layers, c.hidden_dim, c.num_heads, c.ffn_dim, c.max_seq_len, c.vocab_size}) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(v));
  }
  w.put<std::uint32_t>(static_cast<std::uint32_t>(b.model.parameters().size()));
  b.model.for_each_parameter([&](const std::string& name, const Matrix& m) {
    detail::put_tensor(w, name, m, detail::is_vector_param(name));
  });

  w.put<std::uint8_t>(b.projection ? 1 : 0);
  if (b.projection) {
    const auto& p = *b.projection;
    p.check_invariants();
    detail::put_tensor(w, "projection.mean", Matrix(1, p.input_dim(), p.mean.values), true);
    detail::put_tensor(w, "projection.components", p.components, false);
    detail::put_tensor(w, "projection.explained_variance", Matrix(1, p.output_dim(), p.explained_variance), true);
  }

  w.put<std::uint8_t>(b.vocab ? 1 : 0);
  if (b.vocab) {
    if (b.vocab->size() != c.vocab_size) throw InvalidInput("vocabulary size does not match model config");
    w.put<std::uint8_t>(b.tokenizer.lowercase ? 1 : 0);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(b.tokenizer.max_chars_per_word));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(b.vocab->size()));
    for (const auto& t : b.vocab->tokens()) w.put_string(t);
  }
  return w.finish();
}

inline ModelBundle deserialize_model(std::string_view bytes) {
  auto r = detail::open_container(bytes, "MDST");
  ModelBundle b;
  const auto kind = r.get<std::uint8_t>();
  if (kind > 1) throw IntegrityError("unknown model kind " + std::to_string(kind));
  b.kind = static_cast<ModelKind>(kind);

  ModelConfig c;
  for (auto* field : {&c.num_layers, &c.hidden_dim, &c.num_heads, &c.ffn_dim, &c.max_seq_len, &c.vocab_size}) {
    *field = r.get<std::uint32_t>();
  }
  try {
    c.validate();
  } catch (const InvalidInput& e) {
    throw IntegrityError(std::string("stored config is invalid: ") + e.what());
  }
  // Reject configs whose tensors could not fit in the file before allocating.
  if (c.parameter_count() * sizeof(float) > r.remaining()) throw IntegrityError("container truncated");
  b.model = EncoderModel::zeros(c);
  const auto count = r.get<std::uint32_t>();
  if (count != b.model.parameters().size()) throw IntegrityError("tensor count does not match config");
  b.model.for_each_parameter([&](const std::string& name, Matrix& m) {
    detail::get_tensor(r, name, m, detail::is_vector_param(name));
  });

  if (r.get<std::uint8_t>() == 1) {
    // Peek the component shape so the mean/variance tensors can be sized.
    auto peek = r;
    peek.get_string();
    const auto rank = peek.get<std::uint32_t>();
    const auto d = rank == 1 ? peek.get<std::uint32_t>() : 0;
    peek.get_bytes(std::size_t{d} * sizeof(float));
    peek.get_string();
    if (peek.get<std::uint32_t>() != 2) throw IntegrityError("projection components must have rank 2");
    peek.get<std::uint32_t>();
    const auto k = peek.get<std::uint32_t>();
    if (std::size_t{d} * k * sizeof(float) > r.remaining()) throw IntegrityError("container truncated");

    PcaProjection p;
    Matrix mean(1, d), ev(1, k);
    p.components = Matrix(d, k);
    detail::get_tensor(r, "projection.mean", mean, true);
    detail::get_tensor(r, "projection.components", p.components, false);
    detail::get_tensor(r, "projection.explained_variance", ev, true);
    p.mean = EmbeddingVector(std::vector<double>(mean.values().begin(), mean.values().end()));
    p.explained_variance.assign(ev.values().begin(), ev.values().end());
    try {
      p.check_invariants(1e-5);
    } catch (const InvalidInput& e) {
      throw IntegrityError(e.what());
    }
    if (p.input_dim() != c.hidden_dim) throw IntegrityError("projection input dimension does not match model");
    b.projection = std::move(p);
  }

  if (r.get<std::uint8_t>() == 1) {
    b.tokenizer.lowercase = r.get<std::uint8_t>() != 0;
    b.tokenizer.max_chars_per_word = r.get<std::uint32_t>();
    const auto n = r.get<std::uint32_t>();
    if (n != c.vocab_size) throw IntegrityError("vocabulary size does not match model config");
    std::vector<std::string> tokens;
    for (std::uint32_t i = 0; i < n; ++i) tokens.push_back(r.get_string());
    try {
      b.vocab = Vocabulary(std::move(tokens));
    } catch (const InvalidInput& e) {
      throw IntegrityError(e.what());
    }
  }
  if (r.remaining() != 0) throw IntegrityError("trailing bytes after container payload");
  return b;
}

inline void save_model(const ModelBundle& bundle, const std::string& path) {
  detail::write_file_atomically(path, serialize_model(bundle));
}

inline ModelBundle load_model(const std::string& path) { return deserialize_model(detail::read_file(path)); }

inline std::string serialize_cache(const EmbeddingCache& cache) {
  detail::ByteWriter w;
  w.put_bytes("MDEC");
  w.put<std::uint8_t>(kContainerVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cache.dim()));
  w.put<std::uint64_t>(cache.size());
  for (const auto& [sentence, v] : cache.entries()) {
    w.put_string(sentence);
    for (const double x : v.values) w.put<double>(x);
  }
  return w.finish();
}

inline EmbeddingCache deserialize_cache(std::string_view bytes) {
  auto r = detail::open_container(bytes, "MDEC");
  const auto dim = r.get<std::uint32_t>();
  const auto count = r.get<std::uint64_t>();
  EmbeddingCache cache(dim);
  std::string previous;
  for (std::uint64_t i = 0; i < count; ++i) {
    auto sentence = r.get_string();
    if (i > 0 && !(previous < sentence)) throw IntegrityError("cache entries are not in canonical order");
    std::vector<double> v(dim);
    for (auto& x : v) {
      x = r.get<double>();
      if (!std::isfinite(x)) throw IntegrityError("cache holds a non-finite value");
    }
    cache.insert(sentence, EmbeddingVector(std::move(v)));
    previous = std::move(sentence);
  }
  if (r.remaining() != 0) throw IntegrityError("trailing bytes after cache payload");
  return cache;
}

inline void save_cache(const EmbeddingCache& cache, const std::string& path) {
  detail::write_file_atomically(path, serialize_cache(cache));
}

inline EmbeddingCache load_cache(const std::string& path) { return deserialize_cache(detail::read_file(path)); }

}  // namespace minidistill
