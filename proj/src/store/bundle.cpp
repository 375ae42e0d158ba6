// Copyright (c) 2026, modkit authors
// SPDX-License-Identifier: Apache-2.0

#include "modkit/store/bundle.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <unistd.h>

#include "modkit/util/text.hpp"

namespace modkit {

static_assert(std::endian::native == std::endian::little, "bundle I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'M', 'O', 'D', 'K', 'I', 'T', 'B', 'N'};
constexpr std::size_t kHeaderSize = 28;

template <class U>
void put(std::vector<std::uint8_t>& out, U v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof v);
}

template <class U>
U get(const std::vector<std::uint8_t>& in, std::size_t at) {
  U v;
  std::memcpy(&v, in.data() + at, sizeof v);
  return v;
}

std::string join_indices(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::string join_classes(const std::vector<std::int32_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::string bits_str(const BinaryMask& m) {
  std::string s(m.size(), '0');
  for (std::size_t i = 0; i < m.size(); ++i)
    if (m[i]) s[i] = '1';
  return s;
}

// Accumulates the manifest and the blob side by side.
class Writer {
 public:
  void kv(const std::string& k, const std::string& v) { manifest_ += k + " = " + v + "\n"; }

  template <class P>
  void tensors(const std::string& prefix, const P& params) {
    for (const auto& [name, p] : params) {
      const auto& t = p->value;
      kv("tensor." + prefix + name, std::to_string(blob_.size()) + ":" + join_dims(t.shape()));
      const auto* bytes = reinterpret_cast<const std::uint8_t*>(t.ptr());
      blob_.insert(blob_.end(), bytes, bytes + t.size() * sizeof(float));
    }
  }

  std::string& manifest() { return manifest_; }
  std::vector<std::uint8_t>& blob() { return blob_; }

 private:
  std::string manifest_;
  std::vector<std::uint8_t> blob_;
};

void write_module(Writer& w, std::size_t i, const SubModule<float>& m) {
  const std::string p = "module." + std::to_string(i) + ".";
  w.kv(p + "spec", format_model_spec(m.net.spec));
  w.kv(p + "classes", join_classes(m.masks.classes));
  w.kv(p + "threshold", format_double(m.masks.threshold));
  w.kv(p + "samples", std::to_string(m.masks.samples));
  w.kv(p + "layers", std::to_string(m.masks.layers.size()));
  for (std::size_t l = 0; l < m.masks.layers.size(); ++l) {
    const std::string q = p + "layer." + std::to_string(l) + ".";
    w.kv(q + "name", m.masks.layer_names[l]);
    w.kv(q + "mask", bits_str(m.masks.layers[l]));
    w.kv(q + "retained", join_indices(m.retained[l]));
  }
  w.kv(p + "feature_index", join_indices(m.feature_index));
  w.kv(p + "source_feature_dim", std::to_string(m.source_feature_dim));
  w.kv(p + "source_n_classes", std::to_string(m.source_n_classes));
  w.kv(p + "source_hash", m.source_hash);
  std::uint32_t scale_bits;
  std::memcpy(&scale_bits, &m.net.attn_scale, sizeof scale_bits);
  w.kv(p + "attn_scale_bits", std::to_string(scale_bits));
  for (std::size_t b = 0; b < m.net.blocks.size(); ++b) {
    const auto& blk = m.net.blocks[b];
    const std::string q = p + "block." + std::to_string(b) + ".";
    w.kv(q + "maskable", blk.maskable ? "true" : "false");
    w.kv(q + "attn_pad", join_indices(blk.attn.out_pad));
    w.kv(q + "mlp_pad", join_indices(blk.mlp.out_pad));
  }
  w.tensors(p, m.net.named_parameters());
}

}  // namespace

std::vector<std::uint8_t> encode_bundle(const Artifact& a) {
  Writer w;
  w.kv("format", "modkit-bundle");
  w.kv("kind", a.kind == ArtifactKind::kModel ? "model" : "modules");
  w.kv("provenance.command", a.provenance.command);
  w.kv("provenance.seed", std::to_string(a.provenance.seed));
  w.kv("provenance.config_hash", a.provenance.config_hash);
  w.kv("provenance.source_hash", a.provenance.source_hash);
  w.kv("provenance.toolkit", a.provenance.toolkit);
  for (const auto& [k, v] : a.notes) w.kv("note." + k, v);
  if (a.kind == ArtifactKind::kModel) {
    w.kv("model.spec", format_model_spec(a.model.spec()));
    w.tensors("model.", a.model.named_parameters());
  } else {
    w.kv("modules", std::to_string(a.modules.size()));
    for (std::size_t i = 0; i < a.modules.size(); ++i) write_module(w, i, a.modules[i]);
  }
  const auto& blob = w.blob();
  w.kv("blob.bytes", std::to_string(blob.size()));
  w.kv("blob.hash", hex64(fnv1a64(blob.data(), blob.size())));
  const auto& man = w.manifest();

  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  put<std::uint32_t>(out, kBundleVersion);
  put<std::uint64_t>(out, man.size());
  put<std::uint64_t>(out, fnv1a64(man.data(), man.size()));
  out.insert(out.end(), man.begin(), man.end());
  out.insert(out.end(), blob.begin(), blob.end());
  return out;
}

namespace {

struct Entry {
  std::string value;
  std::size_t offset;  // absolute byte offset of the line
};

class Manifest {
 public:
  Manifest(const std::string& text, std::size_t base) {
    std::size_t pos = 0;
    while (pos < text.size()) {
      auto nl = text.find('\n', pos);
      if (nl == std::string::npos) throw ParseError("manifest: unterminated line", base + pos);
      const std::string line = text.substr(pos, nl - pos);
      const auto eq = line.find(" = ");
      if (eq == std::string::npos) throw ParseError("manifest: expected 'key = value'", base + pos);
      const std::string key = line.substr(0, eq);
      if (!map_.emplace(key, Entry{line.substr(eq + 3), base + pos}).second)
        throw ParseError("manifest: duplicate key '" + key + "'", base + pos);
      order_.push_back(key);
      pos = nl + 1;
    }
  }

  const Entry& at(const std::string& key) const {
    auto it = map_.find(key);
    if (it == map_.end()) throw ParseError("manifest: missing key '" + key + "'", end_);
    return it->second;
  }
  const std::string& str(const std::string& key) const { return at(key).value; }
  bool has(const std::string& key) const { return map_.count(key) != 0; }

  template <class F>
  auto parsed(const std::string& key, F f) const {
    const auto& e = at(key);
    try {
      return f(e.value);
    } catch (const UsageError& err) {
      throw ParseError("manifest: " + key + ": " + err.what(), e.offset);
    }
  }
  std::size_t num(const std::string& key) const {
    return parsed(key, [&](const std::string& v) { return static_cast<std::size_t>(parse_u64(v, key)); });
  }
  std::vector<std::size_t> indices(const std::string& key) const {
    return parsed(key, [&](const std::string& v) {
      std::vector<std::size_t> out;
      if (v.empty()) return out;
      for (auto i : parse_int_list(v, key)) {
        if (i < 0) throw UsageError("negative index");
        out.push_back(static_cast<std::size_t>(i));
      }
      return out;
    });
  }

  const std::vector<std::string>& keys() const { return order_; }
  void set_end(std::size_t e) { end_ = e; }

 private:
  std::map<std::string, Entry> map_;
  std::vector<std::string> order_;
  std::size_t end_ = 0;
};

template <class P>
void read_tensors(const Manifest& m, const std::string& prefix, const P& params, const std::vector<std::uint8_t>& blob,
                  std::size_t blob_base) {
  std::size_t expected = 0;
  for (const auto& key : m.keys())
    if (key.rfind("tensor." + prefix, 0) == 0) ++expected;
  if (expected != params.size()) {
    throw ParseError("manifest: " + std::to_string(expected) + " tensors under '" + prefix + "', topology needs " +
                         std::to_string(params.size()),
                     blob_base);
  }
  for (const auto& [name, p] : params) {
    const std::string key = "tensor." + prefix + name;
    const auto& e = m.at(key);
    const auto colon = e.value.find(':');
    if (colon == std::string::npos) throw ParseError("manifest: bad tensor entry '" + key + "'", e.offset);
    const auto off = m.parsed(key, [&](const std::string& v) { return parse_u64(v.substr(0, colon), key); });
    Shape shape = m.parsed(key, [&](const std::string& v) { return parse_dims(v.substr(colon + 1), key); });
    const std::size_t bytes = numel(shape) * sizeof(float);
    if (off > blob.size() || bytes > blob.size() - off)
      throw ParseError("tensor '" + name + "' lies outside the blob", blob_base + blob.size());
    Tensor<float> t(shape);
    if (bytes) std::memcpy(t.ptr(), blob.data() + off, bytes);
    *p = Parameter<float>(std::move(t));
  }
}

BinaryMask parse_bits(const Manifest& m, const std::string& key) {
  return m.parsed(key, [&](const std::string& v) {
    BinaryMask b(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (v[i] != '0' && v[i] != '1') throw UsageError("mask must be a 0/1 string");
      b[i] = v[i] == '1';
    }
    return b;
  });
}

SubModule<float> read_module(const Manifest& m, std::size_t i, const std::vector<std::uint8_t>& blob,
                             std::size_t blob_base) {
  const std::string p = "module." + std::to_string(i) + ".";
  SubModule<float> s;
  const auto spec = m.parsed(p + "spec", [](const std::string& v) { return parse_model_spec(v); });
  // Single-class modules have a one-output head; the shell is built with a
  // valid class count and every tensor is replaced below.
  auto shell = spec;
  shell.n_classes = std::max<std::size_t>(2, spec.n_classes);
  Rng rng(0);
  s.net = m.parsed(p + "spec", [&](const std::string&) {
    validate(shell);
    return Backbone<float>::init(shell, rng);
  });
  s.net.spec = spec;
  s.masks.classes = m.parsed(p + "classes", [&](const std::string& v) { return parse_int_list(v, "classes"); });
  s.masks.threshold = m.parsed(p + "threshold", [&](const std::string& v) { return parse_double(v, "threshold"); });
  s.masks.samples = m.num(p + "samples");
  const std::size_t layers = m.num(p + "layers");
  for (std::size_t l = 0; l < layers; ++l) {
    const std::string q = p + "layer." + std::to_string(l) + ".";
    s.masks.layer_names.push_back(m.str(q + "name"));
    s.masks.layers.push_back(parse_bits(m, q + "mask"));
    s.retained.push_back(m.indices(q + "retained"));
  }
  s.feature_index = m.indices(p + "feature_index");
  s.source_feature_dim = m.num(p + "source_feature_dim");
  s.source_n_classes = m.num(p + "source_n_classes");
  s.source_hash = m.str(p + "source_hash");
  const auto bits = static_cast<std::uint32_t>(m.num(p + "attn_scale_bits"));
  std::memcpy(&s.net.attn_scale, &bits, sizeof bits);
  for (std::size_t b = 0; b < s.net.blocks.size(); ++b) {
    auto& blk = s.net.blocks[b];
    const std::string q = p + "block." + std::to_string(b) + ".";
    blk.maskable = m.parsed(q + "maskable", [&](const std::string& v) { return parse_bool(v, "maskable"); });
    blk.attn.out_pad = m.indices(q + "attn_pad");
    blk.mlp.out_pad = m.indices(q + "mlp_pad");
  }
  read_tensors(m, p, s.net.named_parameters(), blob, blob_base);
  return s;
}

}  // namespace

Artifact decode_bundle(const std::vector<std::uint8_t>& in) {
  if (in.size() < 8 || std::memcmp(in.data(), kMagic, 8) != 0) {
    throw ParseError("not a modkit bundle (bad magic)", 0);
  }
  if (in.size() < kHeaderSize) throw ParseError("truncated bundle header", in.size());
  const auto version = get<std::uint32_t>(in, 8);
  if (version != kBundleVersion) {
    throw VersionError("bundle format version " + std::to_string(version) + " is not supported (reader supports " +
                       std::to_string(kBundleVersion) + ")");
  }
  const auto man_len = get<std::uint64_t>(in, 12);
  if (man_len > in.size() - kHeaderSize) throw ParseError("truncated manifest", in.size());
  const std::string text(reinterpret_cast<const char*>(in.data() + kHeaderSize), man_len);
  if (fnv1a64(text.data(), text.size()) != get<std::uint64_t>(in, 20)) {
    throw IntegrityError("manifest hash mismatch");
  }
  const std::size_t blob_base = kHeaderSize + man_len;
  Manifest m(text, kHeaderSize);
  m.set_end(blob_base);
  if (m.str("format") != "modkit-bundle") throw ParseError("unknown format tag", m.at("format").offset);

  const std::size_t blob_bytes = m.num("blob.bytes");
  const std::size_t have = in.size() - blob_base;
  if (have < blob_bytes) throw ParseError("truncated blob", in.size());
  if (have > blob_bytes) throw ParseError("trailing bytes after blob", blob_base + blob_bytes);
  const std::vector<std::uint8_t> blob(in.begin() + static_cast<std::ptrdiff_t>(blob_base), in.end());
  if (hex64(fnv1a64(blob.data(), blob.size())) != m.str("blob.hash")) {
    throw IntegrityError("blob content hash mismatch");
  }

  Artifact a;
  a.provenance.command = m.str("provenance.command");
  a.provenance.seed = m.parsed("provenance.seed", [](const std::string& v) { return parse_u64(v, "seed"); });
  a.provenance.config_hash = m.str("provenance.config_hash");
  a.provenance.source_hash = m.str("provenance.source_hash");
  a.provenance.toolkit = m.str("provenance.toolkit");
  for (const auto& key : m.keys())
    if (key.rfind("note.", 0) == 0) a.notes.emplace_back(key.substr(5), m.str(key));

  const auto& kind = m.str("kind");
  if (kind == "model") {
    a.kind = ArtifactKind::kModel;
    const auto spec = m.parsed("model.spec", [](const std::string& v) { return parse_model_spec(v); });
    a.model = m.parsed("model.spec", [&](const std::string&) { return build_model<float>(spec); });
    read_tensors(m, "model.", a.model.named_parameters(), blob, blob_base);
  } else if (kind == "modules") {
    a.kind = ArtifactKind::kModules;
    const std::size_t n = m.num("modules");
    for (std::size_t i = 0; i < n; ++i) a.modules.push_back(read_module(m, i, blob, blob_base));
  } else {
    throw ParseError("unknown artifact kind '" + kind + "'", m.at("kind").offset);
  }
  return a;
}

void write_file_atomic(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  const fs::path tmp = target.parent_path() / (target.filename().string() + ".tmp" + std::to_string(::getpid()));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw UsageError("cannot write '" + tmp.string() + "'");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw UsageError("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp);
    throw UsageError("cannot rename onto '" + path + "': " + ec.message());
  }
}

void save_bundle(const Artifact& a, const std::string& path) {
  const auto bytes = encode_bundle(a);
  write_file_atomic(path, std::string(bytes.begin(), bytes.end()));
}

Artifact load_bundle(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open bundle '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), {});
  return decode_bundle(bytes);
}

std::string config_hash(const TrainConfig& cfg) {
  const auto text = format_config(cfg);
  return hex64(fnv1a64(text.data(), text.size()));
}

}  // namespace modkit
