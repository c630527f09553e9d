#pragma once

#include <cstdint>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "discup/discriminator.hpp"
#include "discup/error.hpp"
#include "discup/fsio.hpp"
#include "discup/prompt.hpp"
#include "discup/transformer.hpp"

namespace discup {

// Checkpoint container: "DCUP" magic, u32 version, plain-text key=value
// metadata, a tensor directory (name, shape, byte offset) and a payload of
// little-endian f32 blobs guarded by a CRC32. All integers little-endian.
inline constexpr uint32_t kCheckpointVersion = 1;

namespace ckpt_detail {

inline uint32_t crc32(const std::string& data) {
  static uint32_t table[256];
  static bool init = false;
  if (!init) {
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k)
        c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      table[i] = c;
    }
    init = true;
  }
  uint32_t c = 0xffffffffu;
  for (unsigned char b : data) c = table[(c ^ b) & 0xffu] ^ (c >> 8);
  return c ^ 0xffffffffu;
}

inline void put_u16(std::string& out, uint16_t v) {
  for (int i = 0; i < 2; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}
inline void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

struct Reader {
  const std::string& data;
  size_t pos = 0;

  void need(size_t n) const {
    if (pos + n > data.size())
      throw FormatError("checkpoint: truncated file");
  }
  uint16_t u16() {
    need(2);
    uint16_t v = 0;
    for (int i = 0; i < 2; ++i) v |= uint16_t((unsigned char)data[pos++]) << (8 * i);
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t((unsigned char)data[pos++]) << (8 * i);
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t((unsigned char)data[pos++]) << (8 * i);
    return v;
  }
  std::string bytes(size_t n) {
    need(n);
    std::string s = data.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace ckpt_detail

class CheckpointWriter {
 public:
  void set_meta(const std::string& key, const std::string& value) {
    meta_[key] = value;
  }

  void add(const std::string& name, const TensorF& t) {
    Entry e;
    e.name = name;
    e.shape = t.shape();
    e.offset = payload_.size();
    const char* raw = reinterpret_cast<const char*>(t.data());
    payload_.append(raw, t.numel() * sizeof(float));
    entries_.push_back(std::move(e));
  }

  std::string serialize() const {
    using namespace ckpt_detail;
    std::string meta;
    for (const auto& [k, v] : meta_) meta += k + "=" + v + "\n";

    std::string out = "DCUP";
    put_u32(out, kCheckpointVersion);
    put_u32(out, uint32_t(meta.size()));
    out += meta;
    put_u32(out, uint32_t(entries_.size()));
    for (const auto& e : entries_) {
      put_u16(out, uint16_t(e.name.size()));
      out += e.name;
      put_u32(out, uint32_t(e.shape.size()));
      for (int d : e.shape) put_u32(out, uint32_t(d));
      put_u64(out, e.offset);
    }
    put_u64(out, payload_.size());
    out += payload_;
    put_u32(out, crc32(payload_));
    return out;
  }

  void save(const std::string& path) const {
    atomic_write_file(path, serialize());
  }

 private:
  struct Entry {
    std::string name;
    std::vector<int> shape;
    uint64_t offset = 0;
  };
  std::map<std::string, std::string> meta_;
  std::vector<Entry> entries_;
  std::string payload_;
};

class CheckpointFile {
 public:
  struct Entry {
    std::vector<int> shape;
    std::vector<float> data;
  };

  static CheckpointFile parse(const std::string& bytes) {
    using namespace ckpt_detail;
    Reader r{bytes};
    if (r.bytes(4) != "DCUP") throw FormatError("checkpoint: bad magic");
    const uint32_t version = r.u32();
    if (version != kCheckpointVersion)
      throw FormatError("checkpoint: unsupported version " +
                        std::to_string(version));
    CheckpointFile f;
    const std::string meta = r.bytes(r.u32());
    size_t start = 0;
    while (start < meta.size()) {
      size_t nl = meta.find('\n', start);
      if (nl == std::string::npos) nl = meta.size();
      const std::string line = meta.substr(start, nl - start);
      const size_t eq = line.find('=');
      if (eq != std::string::npos)
        f.meta_[line.substr(0, eq)] = line.substr(eq + 1);
      start = nl + 1;
    }
    struct Dir {
      std::string name;
      std::vector<int> shape;
      uint64_t offset;
    };
    std::vector<Dir> dirs;
    const uint32_t n_tensors = r.u32();
    for (uint32_t i = 0; i < n_tensors; ++i) {
      Dir d;
      d.name = r.bytes(r.u16());
      const uint32_t ndim = r.u32();
      for (uint32_t k = 0; k < ndim; ++k) d.shape.push_back(int(r.u32()));
      d.offset = r.u64();
      dirs.push_back(std::move(d));
    }
    const uint64_t payload_len = r.u64();
    const std::string payload = r.bytes(payload_len);
    const uint32_t stored_crc = r.u32();
    if (crc32(payload) != stored_crc)
      throw FormatError("checkpoint: payload checksum mismatch");
    for (const auto& d : dirs) {
      size_t count = 1;
      for (int dim : d.shape) count *= size_t(dim);
      if (d.offset + count * sizeof(float) > payload.size())
        throw FormatError("checkpoint: tensor overruns payload");
      Entry e;
      e.shape = d.shape;
      e.data.resize(count);
      std::memcpy(e.data.data(), payload.data() + d.offset,
                  count * sizeof(float));
      f.tensors_[d.name] = std::move(e);
    }
    return f;
  }

  static CheckpointFile load(const std::string& path) {
    return parse(read_file(path));
  }

  const std::string& meta(const std::string& key) const {
    auto it = meta_.find(key);
    if (it == meta_.end())
      throw FormatError("checkpoint: missing metadata key " + key);
    return it->second;
  }

  const Entry& tensor(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end())
      throw FormatError("checkpoint: missing tensor " + name);
    return it->second;
  }

  void expect_kind(const std::string& kind) const {
    if (meta("kind") != kind)
      throw KindMismatchError("checkpoint holds a '" + meta("kind") +
                              "' model where a '" + kind + "' was expected");
  }

 private:
  std::map<std::string, std::string> meta_;
  std::map<std::string, Entry> tensors_;
};

// --- model-specific save/load (f32 models) ---

namespace ckpt_detail {

inline std::vector<std::pair<std::string, TensorF>> named_params(
    const Backbone<float>& bb) {
  std::vector<std::pair<std::string, TensorF>> out = {
      {"tok_emb", bb.tok_emb}, {"pos_emb", bb.pos_emb}};
  for (size_t i = 0; i < bb.blocks.size(); ++i) {
    const auto& b = bb.blocks[i];
    const std::string p = "blk" + std::to_string(i) + ".";
    out.emplace_back(p + "ln1_g", b.ln1_g);
    out.emplace_back(p + "ln1_b", b.ln1_b);
    out.emplace_back(p + "w_qkv", b.w_qkv);
    out.emplace_back(p + "b_qkv", b.b_qkv);
    out.emplace_back(p + "w_proj", b.w_proj);
    out.emplace_back(p + "b_proj", b.b_proj);
    out.emplace_back(p + "ln2_g", b.ln2_g);
    out.emplace_back(p + "ln2_b", b.ln2_b);
    out.emplace_back(p + "w_up", b.w_up);
    out.emplace_back(p + "b_up", b.b_up);
    out.emplace_back(p + "w_down", b.w_down);
    out.emplace_back(p + "b_down", b.b_down);
  }
  out.emplace_back("lnf_g", bb.lnf_g);
  out.emplace_back("lnf_b", bb.lnf_b);
  return out;
}

inline void set_arch_meta(CheckpointWriter& w, const TransformerConfig& cfg) {
  w.set_meta("vocab_size", std::to_string(cfg.vocab_size));
  w.set_meta("d_emb", std::to_string(cfg.d_emb));
  w.set_meta("n_layers", std::to_string(cfg.n_layers));
  w.set_meta("n_heads", std::to_string(cfg.n_heads));
  w.set_meta("max_ctx", std::to_string(cfg.max_ctx));
}

inline TransformerConfig arch_meta(const CheckpointFile& f) {
  TransformerConfig cfg;
  cfg.vocab_size = std::stoi(f.meta("vocab_size"));
  cfg.d_emb = std::stoi(f.meta("d_emb"));
  cfg.n_layers = std::stoi(f.meta("n_layers"));
  cfg.n_heads = std::stoi(f.meta("n_heads"));
  cfg.max_ctx = std::stoi(f.meta("max_ctx"));
  return cfg;
}

inline void restore(TensorF& dst, const CheckpointFile::Entry& src,
                    const char* name) {
  if (dst.shape() != src.shape)
    throw FormatError(std::string("checkpoint: shape mismatch for ") + name);
  std::copy(src.data.begin(), src.data.end(), dst.data());
}

inline void load_backbone(Backbone<float>& bb, const CheckpointFile& f) {
  for (auto& [name, tensor] : named_params(bb)) {
    TensorF t = tensor;  // shared node: writes through
    restore(t, f.tensor(name), name.c_str());
  }
}

}  // namespace ckpt_detail

inline void save_checkpoint(const CausalLM<float>& model,
                            const std::string& path,
                            const std::map<std::string, std::string>& extra =
                                {}) {
  CheckpointWriter w;
  w.set_meta("kind", "causal_lm");
  ckpt_detail::set_arch_meta(w, model.config());
  for (const auto& [k, v] : extra) w.set_meta(k, v);
  for (const auto& [name, t] : ckpt_detail::named_params(model.backbone))
    w.add(name, t);
  w.add("w_out", model.w_out);
  w.add("b_out", model.b_out);
  w.save(path);
}

inline CausalLM<float> load_causal_lm(const std::string& path) {
  auto f = CheckpointFile::load(path);
  f.expect_kind("causal_lm");
  CausalLM<float> model(ckpt_detail::arch_meta(f), 0);
  ckpt_detail::load_backbone(model.backbone, f);
  ckpt_detail::restore(model.w_out, f.tensor("w_out"), "w_out");
  ckpt_detail::restore(model.b_out, f.tensor("b_out"), "b_out");
  model.set_requires_grad(false);
  return model;
}

inline void save_checkpoint(const Discriminator<float>& model,
                            const std::string& path,
                            const std::map<std::string, std::string>& extra =
                                {}) {
  CheckpointWriter w;
  w.set_meta("kind", "discriminator");
  ckpt_detail::set_arch_meta(w, model.config());
  for (const auto& [k, v] : extra) w.set_meta(k, v);
  for (const auto& [name, t] : ckpt_detail::named_params(model.backbone))
    w.add(name, t);
  w.add("w_head", model.w_head);
  w.add("b_head", model.b_head);
  w.save(path);
}

inline Discriminator<float> load_discriminator(const std::string& path) {
  auto f = CheckpointFile::load(path);
  f.expect_kind("discriminator");
  Discriminator<float> model(ckpt_detail::arch_meta(f), 0);
  ckpt_detail::load_backbone(model.backbone, f);
  ckpt_detail::restore(model.w_head, f.tensor("w_head"), "w_head");
  ckpt_detail::restore(model.b_head, f.tensor("b_head"), "b_head");
  model.set_requires_grad(false);
  return model;
}

inline void save_checkpoint(const MaterializedPrompt<float>& prompt,
                            const std::string& path,
                            const std::map<std::string, std::string>& extra =
                                {}) {
  CheckpointWriter w;
  w.set_meta("kind", "prompt");
  w.set_meta("attribute", prompt.tag.name());
  w.set_meta("length", std::to_string(prompt.matrix.rows()));
  w.set_meta("d_emb", std::to_string(prompt.matrix.cols()));
  for (const auto& [k, v] : extra) w.set_meta(k, v);
  w.add("matrix", prompt.matrix);
  w.save(path);
}

inline MaterializedPrompt<float> load_prompt(const std::string& path) {
  auto f = CheckpointFile::load(path);
  f.expect_kind("prompt");
  MaterializedPrompt<float> p;
  p.tag = AttributeLabel::parse(f.meta("attribute"));
  const auto& e = f.tensor("matrix");
  p.matrix = TensorF::from(e.shape, e.data);
  return p;
}

}  // namespace discup
