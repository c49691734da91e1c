// Copyright 2026 The AMULET-Desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoint container:
//
//   "AMULETCK" | u32 version | str kind | str config-json | u64 n
//   n x (str name | u8 frozen | u64 rows | u64 cols | rows*cols f64)
//   u64 FNV-1a of every preceding byte
//
// Strings are u64 length + bytes, integers and doubles little-endian.
// Adapter checkpoints hold only A, B and the expert head and name the shared
// expert they bind to by checksum; fusion checkpoints reference their bank
// by path and checksum.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "amulet/errors.hpp"
#include "amulet/experts.hpp"
#include "amulet/fusion.hpp"
#include "amulet/hashing.hpp"

namespace amulet::checkpoint {

namespace fs = std::filesystem;
using experts::Parameter;

inline constexpr char kMagic[8] = {'A', 'M', 'U', 'L', 'E', 'T', 'C', 'K'};
inline constexpr std::uint32_t kVersion = 1;

struct Container {
  std::string kind;
  nlohmann::json config;
  std::vector<Parameter> tensors;

  const Parameter& get(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return t;
    throw InputError("checkpoint (" + kind + ") has no tensor '" + name + "'");
  }
};

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

struct Writer {
  std::vector<char> buf;
  void raw(const void* p, std::size_t n) {
    const char* c = static_cast<const char*>(p);
    buf.insert(buf.end(), c, c + n);
  }
  void u64(std::uint64_t v) { raw(&v, 8); }
  void str(const std::string& s) {
    u64(s.size());
    raw(s.data(), s.size());
  }
};

struct Reader {
  const std::vector<char>& buf;
  std::size_t pos = 0;
  std::string where;
  void raw(void* p, std::size_t n) {
    if (buf.size() - pos < n) throw InputError("checkpoint " + where + " is truncated");
    std::memcpy(p, buf.data() + pos, n);
    pos += n;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    raw(&v, 8);
    return v;
  }
  std::string str() {
    const auto n = u64();
    if (n > buf.size() - pos) throw InputError("checkpoint " + where + " is truncated");
    std::string s(buf.data() + pos, n);
    pos += n;
    return s;
  }
};

}  // namespace detail

inline std::vector<char> encode(const Container& c) {
  detail::Writer w;
  w.raw(kMagic, 8);
  const std::uint32_t v = kVersion;
  w.raw(&v, 4);
  w.str(c.kind);
  w.str(c.config.dump());
  w.u64(c.tensors.size());
  for (const auto& t : c.tensors) {
    w.str(t.name);
    const char f = t.frozen ? 1 : 0;
    w.raw(&f, 1);
    w.u64(t.value.rows());
    w.u64(t.value.cols());
    w.raw(t.value.data().data(), t.value.size() * sizeof(double));
  }
  w.u64(checksum(w.buf));
  return w.buf;
}

inline Container decode(const std::vector<char>& buf, const std::string& where = "<memory>") {
  if (buf.size() < 8 + 4 + 8 || std::memcmp(buf.data(), kMagic, 8) != 0) {
    throw InputError("checkpoint " + where + ": bad magic (not a checkpoint file)");
  }
  std::uint64_t stored;
  std::memcpy(&stored, buf.data() + buf.size() - 8, 8);
  if (checksum(std::span<const char>(buf.data(), buf.size() - 8)) != stored) {
    throw ChecksumMismatchError("checkpoint " + where + ": content checksum mismatch (file corrupted)");
  }
  const std::vector<char> body(buf.begin(), buf.end() - 8);
  detail::Reader r{body, 8, where};
  std::uint32_t v;
  r.raw(&v, 4);
  if (v != kVersion) throw InputError("checkpoint " + where + ": unsupported version " + std::to_string(v));
  Container c;
  c.kind = r.str();
  c.config = nlohmann::json::parse(r.str());
  const auto n = r.u64();
  for (std::uint64_t i = 0; i < n; ++i) {
    Parameter p;
    p.name = r.str();
    char f;
    r.raw(&f, 1);
    p.frozen = f != 0;
    const auto rows = r.u64(), cols = r.u64();
    if (rows * cols > (body.size() - r.pos) / sizeof(double)) throw InputError("checkpoint " + where + " is truncated");
    std::vector<double> d(rows * cols);
    r.raw(d.data(), d.size() * sizeof(double));
    p.value = Tensor2(rows, cols, std::move(d));
    c.tensors.push_back(std::move(p));
  }
  if (r.pos != body.size()) throw InputError("checkpoint " + where + ": trailing bytes");
  return c;
}

inline void write_file(const fs::path& path, const std::vector<char>& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline std::vector<char> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void save(const Container& c, const fs::path& path) { write_file(path, encode(c)); }
inline Container load(const fs::path& path) { return decode(read_file(path), path.string()); }

inline void expect_kind(const Container& c, const std::string& kind, const fs::path& path) {
  if (c.kind != kind) throw InputError("checkpoint " + path.string() + " holds a '" + c.kind + "', expected '" + kind + "'");
}

// ---------------------------------------------------------------- experts

/// A complete expert: every tensor, adapters included.
inline Container expert_container(const experts::ExpertModel& m) {
  Container c;
  c.kind = "expert";
  c.config = {{"name", m.name}, {"encoder", experts::to_json(m.cfg)}};
  for (const auto* p : m.tensors()) c.tensors.push_back(*p);
  return c;
}

inline experts::ExpertModel expert_from_container(const Container& c) {
  experts::ExpertModel m;
  m.name = c.config.at("name").get<std::string>();
  m.cfg = experts::encoder_config_from_json(c.config.at("encoder"));
  std::size_t in = m.cfg.feature_dim();
  for (std::size_t l = 0; l < m.cfg.hidden.size(); ++l) {
    experts::LinearLayer layer;
    layer.W = c.get("enc" + std::to_string(l) + ".W");
    layer.b = c.get("enc" + std::to_string(l) + ".b");
    if (layer.W.value.rows() != in || layer.W.value.cols() != m.cfg.hidden[l]) {
      throw ShapeError("checkpoint: layer " + std::to_string(l) + " weight has shape " + layer.W.value.shape_str());
    }
    in = m.cfg.hidden[l];
    m.layers.push_back(std::move(layer));
  }
  m.head_W = c.get("head.W");
  m.head_b = c.get("head.b");
  return m;
}

inline void save_expert(const experts::ExpertModel& m, const fs::path& path) { save(expert_container(m), path); }

inline experts::ExpertModel load_expert(const fs::path& path) {
  const Container c = load(path);
  expect_kind(c, "expert", path);
  return expert_from_container(c);
}

/// Adapter tensors and head of an ASE, bound to `base` by checksum.
inline Container adapter_container(const experts::ExpertModel& ase) {
  Container c;
  c.kind = "adapter";
  nlohmann::json layers = nlohmann::json::array();
  const experts::LoraAdapter* first = nullptr;
  for (const auto& l : ase.layers) {
    if (!l.adapter) throw InputError("save_adapter: expert '" + ase.name + "' has a layer without an adapter");
    if (!first) first = &*l.adapter;
    layers.push_back(l.W.name);
    c.tensors.push_back(l.adapter->A);
    c.tensors.push_back(l.adapter->B);
  }
  c.tensors.push_back(ase.head_W);
  c.tensors.push_back(ase.head_b);
  c.config = {{"name", ase.name},
              {"encoder", experts::to_json(ase.cfg)},
              {"rank", first->rank},
              {"alpha", first->alpha},
              {"dropout", first->dropout_p},
              {"mode", experts::scale_mode_name(first->mode)},
              {"host_layers", layers},
              {"base_checksum", hex64(experts::base_checksum(ase))}};
  return c;
}

inline void save_adapter(const experts::ExpertModel& ase, const fs::path& path) { save(adapter_container(ase), path); }

inline experts::ExpertModel adapter_from_container(const Container& c, const experts::ExpertModel& base,
                                                   const std::string& where = "<memory>") {
  const std::string want = c.config.at("base_checksum").get<std::string>();
  const std::string have = hex64(experts::base_checksum(base));
  if (want != have) {
    throw ChecksumMismatchError("adapter " + where + " binds to shared expert " + want + " but the given one is " + have);
  }
  experts::ExpertModel m = base;
  m.name = c.config.at("name").get<std::string>();
  const auto mode = experts::parse_scale_mode(c.config.at("mode").get<std::string>());
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    experts::LoraAdapter ad;
    ad.A = c.get("enc" + std::to_string(l) + ".lora_A");
    ad.B = c.get("enc" + std::to_string(l) + ".lora_B");
    ad.rank = c.config.at("rank").get<std::size_t>();
    ad.alpha = c.config.at("alpha").get<double>();
    ad.dropout_p = c.config.at("dropout").get<double>();
    ad.mode = mode;
    ad.validate();
    m.layers[l].W.frozen = true;
    m.layers[l].b.frozen = true;
    m.layers[l].adapter = std::move(ad);
  }
  m.head_W = c.get("head.W");
  m.head_b = c.get("head.b");
  return m;
}

inline experts::ExpertModel load_adapter(const fs::path& path, const experts::ExpertModel& base) {
  const Container c = load(path);
  expect_kind(c, "adapter", path);
  return adapter_from_container(c, base, path.string());
}

// ---------------------------------------------------------------- fusion

struct BankRef {
  std::string name;
  std::string path;      // relative to the fusion checkpoint's directory
  std::string checksum;  // file checksum, hex
};

/// `refs[i]` names the checkpoint of `s.bank[i]`; refs[0] is the shared expert.
inline void save_fusion(const fusion::FusionSystem& s, const std::vector<BankRef>& refs, const fs::path& path) {
  if (refs.size() != s.bank.size()) throw InputError("save_fusion: one reference per bank member is required");
  Container c;
  c.kind = "fusion";
  nlohmann::json bank = nlohmann::json::array();
  for (std::size_t i = 0; i < refs.size(); ++i) {
    bank.push_back({{"name", refs[i].name},
                    {"path", refs[i].path},
                    {"checksum", refs[i].checksum},
                    {"model_checksum", hex64(experts::model_checksum(s.bank[i]))}});
  }
  c.config = {{"fusion", fusion::to_json(s.cfg)}, {"gate_disabled", s.gate_disabled}, {"bank", bank}};
  for (const auto* p : s.params()) c.tensors.push_back(*p);
  save(c, path);
}

inline BankRef make_ref(const std::string& name, const fs::path& ckpt, const fs::path& fusion_dir) {
  return {name, fs::relative(ckpt, fusion_dir).generic_string(), hex64(file_checksum(ckpt.string()))};
}

inline fusion::FusionSystem load_fusion(const fs::path& path) {
  const Container c = load(path);
  expect_kind(c, "fusion", path);
  const fs::path dir = path.parent_path();
  fusion::FusionSystem s;
  s.cfg = fusion::fusion_config_from_json(c.config.at("fusion"));
  s.gate_disabled = c.config.value("gate_disabled", false);
  const auto& bank = c.config.at("bank");
  for (std::size_t i = 0; i < bank.size(); ++i) {
    const fs::path p = dir / bank[i].at("path").get<std::string>();
    if (!fs::exists(p)) throw MissingArtifactError("fusion bank member " + p.string() + " is missing");
    const std::string sum = hex64(file_checksum(p.string()));
    if (sum != bank[i].at("checksum").get<std::string>()) {
      throw ChecksumMismatchError("fusion bank member " + p.string() + " changed since the fusion system was trained");
    }
    experts::ExpertModel m = i == 0 ? load_expert(p) : load_adapter(p, s.bank.at(0));
    if (hex64(experts::model_checksum(m)) != bank[i].at("model_checksum").get<std::string>()) {
      throw ChecksumMismatchError("fusion bank member " + p.string() + " does not match its recorded content");
    }
    experts::freeze_all(m);
    s.bank.push_back(std::move(m));
  }
  fusion::validate_bank(s.bank, s.cfg.k);
  const auto params = s.params();
  for (std::size_t i = 0; i < params.size(); ++i) *params[i] = c.get(fusion::FusionSystem::param_names()[i]);
  return s;
}

}  // namespace amulet::checkpoint
