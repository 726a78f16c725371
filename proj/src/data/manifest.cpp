#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "tunnelcrack/data.hpp"
#include "tunnelcrack/random.hpp"

namespace tunnelcrack::data {

namespace {

constexpr const char* kHeader = "image_path,label,mask_path,split";

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

void check_field(const std::string& value) {
  if (value.find_first_of(",\n\r") != std::string::npos) {
    throw ValueError("manifest field contains a delimiter: '" + value + "'");
  }
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

}  // namespace

const char* to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    case Split::unassigned: return "";
  }
  return "";
}

Split split_from_string(const std::string& text) {
  if (text.empty()) return Split::unassigned;
  if (text == "train") return Split::train;
  if (text == "val") return Split::val;
  if (text == "test") return Split::test;
  throw ValueError("unknown split '" + text + "'");
}

std::filesystem::path SampleManifest::resolve(const std::string& path) const {
  std::filesystem::path p(path);
  if (p.is_absolute() || base_dir.empty()) return p;
  return base_dir / p;
}

std::vector<SampleRecord> SampleManifest::select(Split split) const {
  std::vector<SampleRecord> out;
  for (const auto& r : records) {
    if (r.split == split) out.push_back(r);
  }
  return out;
}

std::optional<std::string> SampleManifest::meta(const std::string& key) const {
  for (const auto& [k, v] : metadata) {
    if (k == key) return v;
  }
  return std::nullopt;
}

void SampleManifest::set_meta(const std::string& key, const std::string& value) {
  for (auto& [k, v] : metadata) {
    if (k == key) {
      v = value;
      return;
    }
  }
  metadata.emplace_back(key, value);
}

void SampleManifest::require_masks_for_cracks() const {
  for (const auto& r : records) {
    if (r.label == Label::crack && r.mask_path.empty()) {
      throw ValueError("crack record '" + r.image_path + "' has no mask path");
    }
  }
}

std::string manifest_to_text(const SampleManifest& manifest) {
  std::ostringstream out;
  for (const auto& [k, v] : manifest.metadata) {
    if (k.find('=') != std::string::npos) throw ValueError("metadata key contains '='");
    check_field(k);
    check_field(v);
    out << "# " << k << '=' << v << '\n';
  }
  out << kHeader << '\n';
  for (const auto& r : manifest.records) {
    check_field(r.image_path);
    check_field(r.mask_path);
    out << r.image_path << ',' << models::to_string(r.label) << ',' << r.mask_path << ','
        << to_string(r.split) << '\n';
  }
  return out.str();
}

SampleManifest manifest_from_text(const std::string& text,
                                  const std::filesystem::path& base_dir) {
  SampleManifest m;
  m.base_dir = base_dir;
  std::istringstream in(text);
  std::string line;
  bool header_seen = false;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) continue;
    if (!header_seen && line.front() == '#') {
      auto body = line.substr(1);
      const auto start = body.find_first_not_of(' ');
      body = start == std::string::npos ? std::string{} : body.substr(start);
      const auto eq = body.find('=');
      if (eq == std::string::npos) continue;
      m.metadata.emplace_back(body.substr(0, eq), body.substr(eq + 1));
      continue;
    }
    if (!header_seen) {
      if (line != kHeader) throw ValueError("manifest header must be '" + std::string(kHeader) + "'");
      header_seen = true;
      continue;
    }
    const auto f = split_fields(line);
    if (f.size() != 4) {
      throw ValueError("manifest line " + std::to_string(line_no) + ": expected 4 fields");
    }
    if (f[0].empty()) {
      throw ValueError("manifest line " + std::to_string(line_no) + ": empty image path");
    }
    SampleRecord r;
    r.image_path = f[0];
    r.label = models::label_from_string(f[1]);
    r.mask_path = f[2];
    r.split = split_from_string(f[3]);
    m.records.push_back(std::move(r));
  }
  if (!header_seen) throw ValueError("manifest has no header row");
  return m;
}

void save_manifest(const SampleManifest& manifest, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << manifest_to_text(manifest);
}

SampleManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read manifest " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return manifest_from_text(buffer.str(), path.parent_path());
}

SplitCounts split_counts(std::int64_t n, const std::array<double, 3>& ratios) {
  if (n < 0) throw ValueError("record count must be nonnegative");
  double total = 0.0;
  for (double r : ratios) {
    if (!(r > 0.0)) throw ValueError("split ratios must be positive");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ValueError("split ratios must sum to 1");
  const auto floor_share = [n](double r) {
    return static_cast<std::int64_t>(std::floor(static_cast<double>(n) * r + 1e-9));
  };
  SplitCounts c;
  c.train = floor_share(ratios[0]);
  c.val = floor_share(ratios[1]);
  c.test = n - c.train - c.val;
  return c;
}

SampleManifest stratified_split(const SampleManifest& manifest, const SplitOptions& options) {
  if (manifest.records.empty()) throw ValueError("cannot split an empty manifest");
  std::map<Label, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    by_class[manifest.records[i].label].push_back(i);
  }
  for (Label required : options.required_classes) {
    if (by_class[required].empty()) {
      throw ValueError(std::string("class '") + models::to_string(required) +
                       "' has no records to split");
    }
  }

  SampleManifest out = manifest;
  Rng rng(options.seed);
  for (auto& [label, indices] : by_class) {
    for (std::size_t i = indices.size(); i > 1; --i) {
      std::swap(indices[i - 1], indices[rng.below(i)]);
    }
    const auto counts = split_counts(static_cast<std::int64_t>(indices.size()), options.ratios);
    for (std::size_t k = 0; k < indices.size(); ++k) {
      const auto pos = static_cast<std::int64_t>(k);
      Split s = Split::test;
      if (pos < counts.train) s = Split::train;
      else if (pos < counts.train + counts.val) s = Split::val;
      out.records[indices[k]].split = s;
    }
  }
  out.set_meta("seed", std::to_string(options.seed));
  std::ostringstream ratios;
  ratios << options.ratios[0] << ':' << options.ratios[1] << ':' << options.ratios[2];
  out.set_meta("split_ratios", ratios.str());
  return out;
}

}  // namespace tunnelcrack::data
