#include "dennlm/serialize.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

#include <nlohmann/json.hpp>

namespace dennlm {

namespace {

static_assert(std::endian::native == std::endian::little,
              "model files are little-endian");

using nlohmann::json;

constexpr char kMagic[4] = {'D', 'E', 'N', 'N'};

void write_bytes(std::ostream& out, const void* data, size_t n) {
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n));
}

template <class T>
void write_pod(std::ostream& out, T v) {
  write_bytes(out, &v, sizeof(T));
}

void read_bytes(std::istream& in, void* data, size_t n, const std::string& path) {
  in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n));
  if (!in) throw std::runtime_error("truncated model file: " + path);
}

template <class T>
T read_pod(std::istream& in, const std::string& path) {
  T v;
  read_bytes(in, &v, sizeof(T), path);
  return v;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write model file: " + path);
  return out;
}

// Reads magic + version and returns the metadata block.
json read_header(std::istream& in, const std::string& path) {
  char magic[4];
  read_bytes(in, magic, 4, path);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("not a model file (bad magic): " + path);
  auto version = read_pod<uint32_t>(in, path);
  if (version != kModelFormatVersion)
    throw std::runtime_error("unsupported model format version " +
                             std::to_string(version) + " in " + path);
  auto meta_len = read_pod<uint64_t>(in, path);
  std::string meta(meta_len, '\0');
  read_bytes(in, meta.data(), meta_len, path);
  return json::parse(meta);
}

void write_header(std::ostream& out, const json& meta) {
  write_bytes(out, kMagic, 4);
  write_pod<uint32_t>(out, kModelFormatVersion);
  std::string m = meta.dump();
  write_pod<uint64_t>(out, m.size());
  write_bytes(out, m.data(), m.size());
}

template <class S>
void write_f32_array(std::ostream& out, const Mat<S>& m) {
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) write_pod<float>(out, static_cast<float>(m(i, j)));
}

template <class S>
void write_f32_array(std::ostream& out, const Vec<S>& v) {
  for (Index i = 0; i < v.size(); ++i) write_pod<float>(out, static_cast<float>(v(i)));
}

template <class S>
void read_f32_array(std::istream& in, Mat<S>& m, const std::string& path) {
  std::vector<float> buf(static_cast<size_t>(m.size()));
  read_bytes(in, buf.data(), buf.size() * sizeof(float), path);
  size_t k = 0;
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) m(i, j) = static_cast<S>(buf[k++]);
}

template <class S>
void read_f32_array(std::istream& in, Vec<S>& v, const std::string& path) {
  std::vector<float> buf(static_cast<size_t>(v.size()));
  read_bytes(in, buf.data(), buf.size() * sizeof(float), path);
  for (Index i = 0; i < v.size(); ++i) v(i) = static_cast<S>(buf[static_cast<size_t>(i)]);
}

char hash_digit(uint64_t v) { return "0123456789abcdef"[v & 0xf]; }

std::string hash_hex(uint64_t h) {
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<size_t>(i)] = hash_digit(h);
    h >>= 4;
  }
  return s;
}

uint64_t hash_from_hex(const std::string& s) {
  return std::stoull(s, nullptr, 16);
}

template <class S>
void save_denn_impl(const std::string& path, const DennParams<S>& params,
                    uint64_t vocab_hash) {
  validate(params);
  json meta;
  meta["kind"] = "denn";
  meta["order"] = params.order();
  meta["vocab_size"] = params.vocab_size();
  meta["vocab_hash"] = hash_hex(vocab_hash);
  meta["activation"] = to_string(params.branches[0].activation);
  json dims = json::array();
  for (const auto& b : params.branches)
    dims.push_back({b.embed_dim(), b.hidden_size()});
  meta["branches"] = dims;

  auto out = open_out(path);
  write_header(out, meta);
  for (Index m = 0; m < params.alpha.size(); ++m)
    write_pod<float>(out, static_cast<float>(params.alpha(m)));
  for (const auto& b : params.branches) {
    write_f32_array(out, b.embed);
    write_f32_array(out, b.hidden_w);
    write_f32_array(out, b.hidden_b);
    write_f32_array(out, b.out_w);
    write_f32_array(out, b.out_b);
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace

ModelKind peek_model_kind(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open model file: " + path);
  json meta = read_header(in, path);
  std::string kind = meta.at("kind");
  if (kind == "denn") return ModelKind::kDenn;
  if (kind == "ngram") return ModelKind::kNgram;
  throw std::runtime_error("unknown model kind '" + kind + "' in " + path);
}

uint64_t file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  uint64_t h = 0xcbf29ce484222325ULL;
  char buf[65536];
  while (in) {
    in.read(buf, sizeof(buf));
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

void save_denn_model(const std::string& path, const DennParams<float>& params,
                     uint64_t vocab_hash) {
  save_denn_impl(path, params, vocab_hash);
}

void save_denn_model(const std::string& path, const DennParams<double>& params,
                     uint64_t vocab_hash) {
  save_denn_impl(path, params, vocab_hash);
}

template <class S>
DennParams<S> load_denn_model(const std::string& path, uint64_t* vocab_hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open model file: " + path);
  json meta = read_header(in, path);
  if (meta.at("kind") != "denn")
    throw std::runtime_error("expected a neural model file: " + path);
  if (vocab_hash) *vocab_hash = hash_from_hex(meta.at("vocab_hash"));

  const int order = meta.at("order");
  const Index vocab = meta.at("vocab_size");
  const Activation act = activation_from_string(meta.at("activation"));
  const auto& dims = meta.at("branches");

  DennParams<S> p;
  p.alpha.resize(static_cast<Index>(dims.size()));
  for (Index m = 0; m < p.alpha.size(); ++m)
    p.alpha(m) = static_cast<double>(read_pod<float>(in, path));
  for (const auto& d : dims) {
    NnlmParams<S> b;
    b.order = order;
    b.activation = act;
    Index dim = d.at(0), hidden = d.at(1);
    b.embed.resize(dim, vocab);
    b.hidden_w.resize(hidden, (order - 1) * dim);
    b.hidden_b.resize(hidden);
    b.out_w.resize(vocab, hidden);
    b.out_b.resize(vocab);
    read_f32_array(in, b.embed, path);
    read_f32_array(in, b.hidden_w, path);
    read_f32_array(in, b.hidden_b, path);
    read_f32_array(in, b.out_w, path);
    read_f32_array(in, b.out_b, path);
    p.branches.push_back(std::move(b));
  }
  validate(p);
  return p;
}

template DennParams<float> load_denn_model<float>(const std::string&, uint64_t*);
template DennParams<double> load_denn_model<double>(const std::string&, uint64_t*);

void save_ngram_model(const std::string& path, const CountTable& counts,
                      uint64_t vocab_hash) {
  json meta;
  meta["kind"] = "ngram";
  meta["order"] = counts.order;
  meta["vocab_size"] = counts.vocab_size;
  meta["vocab_hash"] = hash_hex(vocab_hash);

  auto out = open_out(path);
  write_header(out, meta);
  for (int n = 1; n <= counts.order; ++n) {
    const auto& table = counts.raw[static_cast<size_t>(n - 1)];
    std::vector<std::pair<uint64_t, int64_t>> rows(table.begin(), table.end());
    std::sort(rows.begin(), rows.end());
    write_pod<uint64_t>(out, rows.size());
    for (const auto& [key, cnt] : rows) {
      write_pod<uint64_t>(out, key);
      write_pod<int64_t>(out, cnt);
    }
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

CountTable load_ngram_counts(const std::string& path, uint64_t* vocab_hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open model file: " + path);
  json meta = read_header(in, path);
  if (meta.at("kind") != "ngram")
    throw std::runtime_error("expected an n-gram model file: " + path);
  if (vocab_hash) *vocab_hash = hash_from_hex(meta.at("vocab_hash"));

  CountTable t;
  t.order = meta.at("order");
  t.vocab_size = meta.at("vocab_size");
  t.bits = bits_for_vocab(t.vocab_size);
  t.raw.resize(static_cast<size_t>(t.order));
  for (int n = 1; n <= t.order; ++n) {
    auto entries = read_pod<uint64_t>(in, path);
    auto& table = t.raw[static_cast<size_t>(n - 1)];
    table.reserve(entries);
    for (uint64_t i = 0; i < entries; ++i) {
      auto key = read_pod<uint64_t>(in, path);
      auto cnt = read_pod<int64_t>(in, path);
      table.emplace(key, cnt);
    }
  }

  rebuild_derived_counts(t);
  return t;
}

}  // namespace dennlm
