#include "tunnelcrack/weights.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "json.hpp"
#include "tunnelcrack/data.hpp"

namespace tunnelcrack::data {

namespace {

using nlohmann::json;

static_assert(sizeof(double) == 8);

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

void put_double(std::vector<std::uint8_t>& out, double d) {
  put_u64(out, std::bit_cast<std::uint64_t>(d));
}

}  // namespace

std::vector<std::uint8_t> encode_bundle(const NamedTensors& tensors) {
  json entries = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    const std::uint64_t nbytes = static_cast<std::uint64_t>(t.numel()) * 8;
    entries.push_back({{"name", name},
                       {"shape", t.shape()},
                       {"dtype", "float64"},
                       {"offset", offset},
                       {"nbytes", nbytes}});
    offset += nbytes;
  }
  const std::string header =
      json{{"format_version", kBundleVersion}, {"tensors", entries}}.dump();

  std::vector<std::uint8_t> out;
  out.reserve(12 + header.size() + offset);
  out.insert(out.end(), std::begin(kBundleMagic), std::end(kBundleMagic));
  put_u64(out, header.size());
  out.insert(out.end(), header.begin(), header.end());
  for (const auto& [name, t] : tensors) {
    for (double v : t.data()) put_double(out, v);
  }
  return out;
}

NamedTensors decode_bundle(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kBundleMagic, 4) != 0) {
    throw IoError("not a weight bundle (bad magic)");
  }
  const std::uint64_t header_len = get_u64(bytes.data() + 4);
  if (header_len > bytes.size() - 12) throw IoError("weight bundle header is truncated");
  const auto* header_begin = reinterpret_cast<const char*>(bytes.data() + 12);
  json header;
  try {
    header = json::parse(header_begin, header_begin + header_len);
  } catch (const json::exception& e) {
    throw IoError(std::string("weight bundle header is malformed: ") + e.what());
  }
  if (!header.contains("format_version") || header["format_version"] != kBundleVersion) {
    throw IoError("unsupported weight bundle version");
  }

  const std::uint8_t* payload = bytes.data() + 12 + header_len;
  const std::uint64_t payload_len = bytes.size() - 12 - header_len;
  NamedTensors out;
  std::uint64_t expected_offset = 0;
  try {
    for (const auto& e : header.at("tensors")) {
      const auto name = e.at("name").get<std::string>();
      const auto shape = e.at("shape").get<Shape>();
      const auto offset = e.at("offset").get<std::uint64_t>();
      const auto nbytes = e.at("nbytes").get<std::uint64_t>();
      if (e.at("dtype").get<std::string>() != "float64") {
        throw IoError("tensor '" + name + "' has unsupported dtype");
      }
      for (auto d : shape) {
        if (d <= 0) throw IoError("tensor '" + name + "' has a non-positive extent");
      }
      if (nbytes != static_cast<std::uint64_t>(numel(shape)) * 8) {
        throw IoError("tensor '" + name + "' byte size does not match its shape");
      }
      if (offset != expected_offset) {
        throw IoError("tensor '" + name + "' offset overlaps or leaves a gap");
      }
      if (offset + nbytes > payload_len) {
        throw IoError("weight bundle payload is truncated at tensor '" + name + "'");
      }
      std::vector<double> values(nbytes / 8);
      for (std::size_t i = 0; i < values.size(); ++i) {
        values[i] = std::bit_cast<double>(get_u64(payload + offset + 8 * i));
      }
      if (!out.emplace(name, Tensor::from_data(shape, std::move(values))).second) {
        throw IoError("tensor '" + name + "' appears twice");
      }
      expected_offset = offset + nbytes;
    }
  } catch (const json::exception& e) {
    throw IoError(std::string("weight bundle header is malformed: ") + e.what());
  }
  if (expected_offset != payload_len) {
    throw IoError("weight bundle payload length does not match the header");
  }
  return out;
}

void save_bundle(const NamedTensors& tensors, const std::filesystem::path& path) {
  const auto bytes = encode_bundle(tensors);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write weight bundle " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("cannot write weight bundle " + path.string());
}

NamedTensors load_bundle(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read weight bundle " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_bundle(bytes);
}

void save_weights(const models::ModelGraph& model, const std::filesystem::path& path) {
  NamedTensors tensors;
  for (const auto& [name, p] : model.parameters()) tensors.emplace(name, p.value);
  save_bundle(tensors, path);
}

void load_weights(models::ModelGraph& model, const NamedTensors& tensors) {
  for (const auto& [name, t] : tensors) {
    auto it = model.parameters().find(name);
    if (it == model.parameters().end()) {
      throw ShapeError("weight bundle has tensor '" + name + "' unknown to the model");
    }
    if (it->second.value.shape() != t.shape()) {
      throw ShapeError("weight '" + name + "' has shape " + to_string(t.shape()) +
                       " but the model expects " + to_string(it->second.value.shape()));
    }
  }
  if (tensors.size() != model.parameters().size()) {
    throw ShapeError("weight bundle is missing model parameters");
  }
  model.restore(tensors);
}

void load_weights(models::ModelGraph& model, const std::filesystem::path& path) {
  load_weights(model, load_bundle(path));
}

}  // namespace tunnelcrack::data
