#include "anprompt/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "anprompt/errors.hpp"

namespace anprompt {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(TensorTag t) {
  switch (t) {
    case TensorTag::trainable: return "trainable";
    case TensorTag::buffer: return "buffer";
    case TensorTag::frozen: return "frozen";
  }
  return "unknown";
}

namespace {

TensorTag parse_tag(const std::string& s) {
  if (s == "trainable") return TensorTag::trainable;
  if (s == "buffer") return TensorTag::buffer;
  if (s == "frozen") return TensorTag::frozen;
  throw ParseError("manifest: unknown tag '" + s + "'");
}

void put_f32(std::ostream& out, float v) {
  std::uint32_t bits = 0;
  std::memcpy(&bits, &v, 4);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
  char bytes[4];
  std::memcpy(bytes, &bits, 4);
  out.write(bytes, 4);
}

float get_f32(const char* p) {
  std::uint32_t bits = 0;
  std::memcpy(&bits, p, 4);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
  float v = 0.0F;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace

Mat round_to_f32(const Mat& m) { return m.cast<float>().cast<double>(); }

void save_checkpoint(const fs::path& dir, const std::vector<CheckpointEntry>& entries) {
  fs::create_directories(dir);
  std::ofstream bin(dir / "params.bin", std::ios::binary);
  if (!bin) throw FileError("cannot write " + (dir / "params.bin").string());
  json manifest;
  manifest["format"] = "anprompt-checkpoint";
  manifest["version"] = 1;
  json tensors = json::array();
  std::uint64_t offset = 0;
  for (const auto& e : entries) {
    tensors.push_back({{"name", e.name},
                       {"shape", {e.value.rows(), e.value.cols()}},
                       {"dtype", "f32"},
                       {"tag", to_string(e.tag)},
                       {"offset", offset}});
    for (Eigen::Index i = 0; i < e.value.size(); ++i) put_f32(bin, static_cast<float>(e.value.data()[i]));
    offset += static_cast<std::uint64_t>(e.value.size()) * 4;
  }
  manifest["tensors"] = tensors;
  std::ofstream man(dir / "manifest.json");
  if (!man) throw FileError("cannot write " + (dir / "manifest.json").string());
  man << manifest.dump(2) << "\n";
}

std::vector<CheckpointEntry> load_checkpoint(const fs::path& dir) {
  std::ifstream man(dir / "manifest.json");
  if (!man) throw FileError("no checkpoint manifest at " + (dir / "manifest.json").string());
  json manifest;
  try {
    man >> manifest;
  } catch (const json::exception& e) {
    throw ParseError(std::string("checkpoint manifest: ") + e.what());
  }
  std::ifstream bin(dir / "params.bin", std::ios::binary);
  if (!bin) throw FileError("no checkpoint payload at " + (dir / "params.bin").string());
  std::stringstream ss;
  ss << bin.rdbuf();
  const std::string payload = ss.str();

  std::vector<CheckpointEntry> out;
  try {
    for (const auto& t : manifest.at("tensors")) {
      if (t.at("dtype").get<std::string>() != "f32") throw ParseError("manifest: only f32 tensors are supported");
      CheckpointEntry e;
      e.name = t.at("name").get<std::string>();
      e.tag = parse_tag(t.at("tag").get<std::string>());
      const auto rows = t.at("shape").at(0).get<Eigen::Index>();
      const auto cols = t.at("shape").at(1).get<Eigen::Index>();
      const auto offset = t.at("offset").get<std::uint64_t>();
      const auto bytes = static_cast<std::uint64_t>(rows * cols) * 4;
      if (offset + bytes > payload.size()) throw ParseError("checkpoint tensor '" + e.name + "' runs past params.bin");
      e.value.resize(rows, cols);
      for (Eigen::Index i = 0; i < e.value.size(); ++i) {
        e.value.data()[i] = get_f32(payload.data() + offset + static_cast<std::uint64_t>(i) * 4);
      }
      out.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("checkpoint manifest: ") + e.what());
  }
  return out;
}

}  // namespace anprompt
