#include "atl/cache_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "atl/error.hpp"

namespace atl {
namespace {

constexpr std::string_view kMagicStem = "ATLCACHE";
constexpr char kVersion = '1';

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_floats(std::string& out, const std::vector<float>& values) {
  put_u32(out, static_cast<std::uint32_t>(values.size()));
  for (float f : values) put_u32(out, std::bit_cast<std::uint32_t>(f));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  std::string_view take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      fail(ErrorKind::Truncated, std::string("activation cache truncated while reading ") + what);
    }
    std::string_view view(bytes_.data() + pos_, n);
    pos_ += n;
    return view;
  }

  std::uint32_t u32(const char* what) {
    auto raw = take(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(raw[i])) << (8 * i);
    return v;
  }

  std::vector<float> floats(std::uint32_t count, const char* what) {
    std::vector<float> out(count);
    for (auto& f : out) f = std::bit_cast<float>(u32(what));
    return out;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_cache(const ActivationCache& cache) {
  validate(cache);
  nlohmann::json manifest;
  manifest["model_id"] = cache.model_id;
  manifest["penultimate_dim"] = cache.penultimate_dim;
  manifest["record_count"] = cache.records.size();
  auto& layers = manifest["layers"] = nlohmann::json::array();
  for (const auto& layer : cache.layers) layers.push_back({{"name", layer.name}, {"channels", layer.channels}});
  auto& records = manifest["records"] = nlohmann::json::array();
  for (const auto& r : cache.records) {
    records.push_back({{"example_id", r.example_id},
                       {"label", r.label.name},
                       {"label_id", r.label.id},
                       {"split", std::string(to_string(r.split))}});
  }
  const std::string text = manifest.dump();

  std::string out;
  out.append(kMagicStem);
  out.push_back(kVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.append(text);
  for (const auto& r : cache.records) {
    put_u32(out, static_cast<std::uint32_t>(r.lavs.size() + 1));
    for (const auto& lav : r.lavs) put_floats(out, lav);
    put_floats(out, r.penultimate);
  }
  return out;
}

ActivationCache deserialize_cache(const std::string& bytes) {
  Reader in(bytes);
  if (bytes.size() < kMagicStem.size() || std::string_view(bytes).substr(0, kMagicStem.size()) != kMagicStem) {
    fail(ErrorKind::Schema, "not an activation cache (bad magic)");
  }
  in.take(kMagicStem.size(), "magic");
  const char version = in.take(1, "version")[0];
  if (version != kVersion) {
    fail(ErrorKind::Version, std::string("unsupported activation cache version '") + version + "'");
  }
  const std::uint32_t manifest_len = in.u32("manifest length");
  const auto text = in.take(manifest_len, "manifest");

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Schema, std::string("activation cache manifest is not valid JSON: ") + e.what());
  }

  ActivationCache cache;
  try {
    cache.model_id = manifest.at("model_id").get<std::string>();
    cache.penultimate_dim = manifest.at("penultimate_dim").get<int>();
    int index = 0;
    for (const auto& layer : manifest.at("layers")) {
      cache.layers.push_back({index++, layer.at("name").get<std::string>(), layer.at("channels").get<int>()});
    }
    const auto& records = manifest.at("records");
    if (manifest.at("record_count").get<std::size_t>() != records.size()) {
      fail(ErrorKind::Schema, "manifest record_count disagrees with its record list");
    }
    for (const auto& r : records) {
      ExampleRecord rec;
      rec.example_id = r.at("example_id").get<std::string>();
      rec.label = {r.at("label_id").get<int>(), r.at("label").get<std::string>()};
      rec.split = parse_split(r.at("split").get<std::string>());
      cache.records.push_back(std::move(rec));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Schema, std::string("activation cache manifest is malformed: ") + e.what());
  }

  const std::size_t expected_blocks = cache.layers.size() + 1;
  for (auto& rec : cache.records) {
    const std::uint32_t blocks = in.u32("block count");
    if (blocks != expected_blocks) {
      fail(ErrorKind::Schema, "record '" + rec.example_id + "' has " + std::to_string(blocks) +
                                  " payload blocks, manifest declares " + std::to_string(cache.layers.size()) +
                                  " layers + penultimate");
    }
    for (const auto& layer : cache.layers) {
      const std::uint32_t n = in.u32("block length");
      if (n != static_cast<std::uint32_t>(layer.channels)) {
        fail(ErrorKind::Schema, "record '" + rec.example_id + "' layer '" + layer.name + "' payload has " +
                                    std::to_string(n) + " values, manifest declares " +
                                    std::to_string(layer.channels));
      }
      rec.lavs.push_back(in.floats(n, "LAV block"));
    }
    const std::uint32_t n = in.u32("block length");
    if (n != static_cast<std::uint32_t>(cache.penultimate_dim)) {
      fail(ErrorKind::Schema, "record '" + rec.example_id + "' penultimate payload length mismatch");
    }
    rec.penultimate = in.floats(n, "penultimate block");
  }
  if (!in.done()) fail(ErrorKind::Schema, "activation cache has trailing bytes after the last record");
  validate(cache);
  return cache;
}

void write_cache(const ActivationCache& cache, const std::filesystem::path& path) {
  const std::string bytes = serialize_cache(cache);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::Io, "failed writing '" + path.string() + "'");
}

ActivationCache read_cache(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open activation cache '" + path.string() + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return deserialize_cache(buffer.str());
}

std::string digest_bytes(const std::string& bytes) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = kHex[h & 0xF];
    h >>= 4;
  }
  return out;
}

std::string cache_digest(const ActivationCache& cache) { return digest_bytes(serialize_cache(cache)); }

}  // namespace atl
