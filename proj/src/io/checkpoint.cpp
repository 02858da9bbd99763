#include "tml/checkpoint.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>

namespace tml {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr std::size_t kBlock = 512;

void put_u32_le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::string floats_le(const std::vector<float>& values) {
  std::string out;
  out.reserve(values.size() * 4);
  for (float v : values) put_u32_le(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

std::vector<float> floats_from_le(const std::string& bytes) {
  std::vector<float> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i * 4 + b])) << (8 * b);
    out[i] = std::bit_cast<float>(v);
  }
  return out;
}

std::string hex(const unsigned char* data, std::size_t n) {
  static const char* digits = "0123456789abcdef";
  std::string s;
  for (std::size_t i = 0; i < n; ++i) {
    s.push_back(digits[data[i] >> 4]);
    s.push_back(digits[data[i] & 15]);
  }
  return s;
}

void octal(char* field, std::size_t width, std::uint64_t value) {
  // width - 1 digits, NUL terminated
  std::snprintf(field, width, "%0*llo", static_cast<int>(width - 1), static_cast<unsigned long long>(value));
}

std::uint64_t parse_octal(const char* field, std::size_t width) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < width && field[i] != '\0' && field[i] != ' '; ++i) {
    if (field[i] < '0' || field[i] > '7') throw IntegrityError("checkpoint: malformed tar header field");
    v = v * 8 + static_cast<std::uint64_t>(field[i] - '0');
  }
  return v;
}

unsigned header_checksum(const std::array<char, kBlock>& h) {
  unsigned sum = 0;
  for (std::size_t i = 0; i < kBlock; ++i) {
    sum += (i >= 148 && i < 156) ? static_cast<unsigned>(' ') : static_cast<unsigned char>(h[i]);
  }
  return sum;
}

void append_member(std::string& archive, const std::string& name, const std::string& content) {
  if (name.size() >= 100) throw IntegrityError("checkpoint: member name too long: " + name);
  std::array<char, kBlock> h{};
  std::memcpy(h.data(), name.data(), name.size());
  octal(h.data() + 100, 8, 0644);
  octal(h.data() + 108, 8, 0);
  octal(h.data() + 116, 8, 0);
  octal(h.data() + 124, 12, content.size());
  octal(h.data() + 136, 12, 0);
  h[156] = '0';
  std::memcpy(h.data() + 257, "ustar", 6);
  std::memcpy(h.data() + 263, "00", 2);
  std::snprintf(h.data() + 148, 8, "%06o", header_checksum(h));
  h[155] = ' ';
  archive.append(h.data(), kBlock);
  archive.append(content);
  archive.append((kBlock - content.size() % kBlock) % kBlock, '\0');
}

std::map<std::string, std::string> read_members(const std::string& archive, const fs::path& path) {
  std::map<std::string, std::string> members;
  std::size_t pos = 0;
  while (pos + kBlock <= archive.size()) {
    std::array<char, kBlock> h{};
    std::memcpy(h.data(), archive.data() + pos, kBlock);
    if (std::all_of(h.begin(), h.end(), [](char c) { return c == '\0'; })) return members;
    if (std::memcmp(h.data() + 257, "ustar", 5) != 0) throw IntegrityError("checkpoint " + path.string() + ": not a ustar archive");
    if (parse_octal(h.data() + 148, 8) != header_checksum(h)) {
      throw IntegrityError("checkpoint " + path.string() + ": tar header checksum mismatch");
    }
    const std::string name(h.data(), strnlen(h.data(), 100));
    const std::uint64_t size = parse_octal(h.data() + 124, 12);
    pos += kBlock;
    if (pos + size > archive.size()) throw IntegrityError("checkpoint " + path.string() + ": truncated member " + name);
    members[name] = archive.substr(pos, size);
    pos += (size + kBlock - 1) / kBlock * kBlock;
  }
  throw IntegrityError("checkpoint " + path.string() + ": missing end-of-archive marker");
}

std::string member_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "tensors/%05zu.bin", index);
  return buf;
}

}  // namespace

std::string tensors_sha256(const std::vector<CheckpointTensor>& tensors) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw IntegrityError("sha256 unavailable");
  for (const auto& t : tensors) {
    std::string head = t.name;
    head.push_back('\0');
    put_u64_le(head, t.shape.size());
    for (auto d : t.shape) put_u64_le(head, static_cast<std::uint64_t>(d));
    const std::string body = floats_le(t.values);
    EVP_DigestUpdate(ctx.get(), head.data(), head.size());
    EVP_DigestUpdate(ctx.get(), body.data(), body.size());
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest, &len);
  return hex(digest, len);
}

Checkpoint snapshot(const Model<float>& model, const json& config, int epoch) {
  Checkpoint c;
  c.config = config;
  c.epoch = epoch;
  for (const auto& [name, t] : model.state()) c.tensors.push_back({name, t.shape(), t.values()});
  return c;
}

void restore(Model<float>& model, const Checkpoint& checkpoint) {
  std::map<std::string, const CheckpointTensor*> by_name;
  for (const auto& t : checkpoint.tensors) by_name[t.name] = &t;
  for (auto& [name, t] : model.state()) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw IntegrityError("checkpoint has no tensor '" + name + "'");
    if (it->second->shape != t.shape()) {
      throw IntegrityError("checkpoint tensor '" + name + "' has shape " + shape_str(it->second->shape) +
                           ", model expects " + shape_str(t.shape()));
    }
    Tensor<float> target = t;
    target.values() = it->second->values;
  }
}

void write_checkpoint(const fs::path& path, const Checkpoint& checkpoint) {
  json manifest;
  manifest["format"] = "tml-checkpoint";
  manifest["version"] = 1;
  manifest["precision"] = "float32";
  manifest["byte_order"] = "little-endian";
  manifest["epoch"] = checkpoint.epoch;
  manifest["config"] = checkpoint.config;
  manifest["tensors_sha256"] = tensors_sha256(checkpoint.tensors);
  json entries = json::array();
  for (std::size_t i = 0; i < checkpoint.tensors.size(); ++i) {
    const auto& t = checkpoint.tensors[i];
    entries.push_back({{"name", t.name}, {"shape", t.shape}, {"file", member_name(i)}});
  }
  manifest["tensors"] = entries;

  std::string archive;
  append_member(archive, "manifest.json", manifest.dump(2) + "\n");
  for (std::size_t i = 0; i < checkpoint.tensors.size(); ++i) {
    append_member(archive, member_name(i), floats_le(checkpoint.tensors[i].values));
  }
  archive.append(2 * kBlock, '\0');

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(archive.data(), static_cast<std::streamsize>(archive.size()));
  if (!out) throw DataError("cannot write checkpoint " + path.string());
}

namespace {

json read_manifest(const std::map<std::string, std::string>& members, const fs::path& path) {
  auto it = members.find("manifest.json");
  if (it == members.end()) throw IntegrityError("checkpoint " + path.string() + ": missing manifest.json");
  try {
    json m = json::parse(it->second);
    if (m.at("precision") != "float32" || m.at("byte_order") != "little-endian") {
      throw IntegrityError("checkpoint " + path.string() + ": unsupported precision or byte order");
    }
    return m;
  } catch (const json::exception& e) {
    throw IntegrityError("checkpoint " + path.string() + ": bad manifest: " + e.what());
  }
}

std::map<std::string, std::string> load_members(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return read_members(ss.str(), path);
}

}  // namespace

Checkpoint read_checkpoint(const fs::path& path) {
  const auto members = load_members(path);
  const json manifest = read_manifest(members, path);
  Checkpoint c;
  try {
    c.config = manifest.at("config");
    c.epoch = manifest.at("epoch").get<int>();
    for (const auto& e : manifest.at("tensors")) {
      CheckpointTensor t;
      t.name = e.at("name").get<std::string>();
      t.shape = e.at("shape").get<Shape>();
      auto m = members.find(e.at("file").get<std::string>());
      if (m == members.end()) throw IntegrityError("checkpoint " + path.string() + ": missing data for " + t.name);
      if (m->second.size() != shape_numel(t.shape) * 4) {
        throw IntegrityError("checkpoint " + path.string() + ": size mismatch for " + t.name);
      }
      t.values = floats_from_le(m->second);
      c.tensors.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    throw IntegrityError("checkpoint " + path.string() + ": bad manifest: " + e.what());
  }
  if (tensors_sha256(c.tensors) != manifest.value("tensors_sha256", "")) {
    throw IntegrityError("checkpoint " + path.string() + ": tensor hash mismatch");
  }
  return c;
}

std::string checkpoint_hash(const fs::path& path) {
  return read_manifest(load_members(path), path).value("tensors_sha256", "");
}

}  // namespace tml
