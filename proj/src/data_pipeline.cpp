#include "ptl/data_pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"

namespace ptl::data {

using nlohmann::json;

std::string_view to_string(Split split) {
  switch (split) {
    case Split::Train:
      return "train";
    case Split::Val:
      return "val";
    case Split::Test:
      return "test";
  }
  return "train";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::Train;
  if (text == "val") return Split::Val;
  if (text == "test") return Split::Test;
  throw FormatError("unknown split '" + std::string(text) + "'");
}

std::map<int, std::size_t> DatasetManifest::count_by_quality() const {
  std::map<int, std::size_t> counts;
  for (const auto& r : records) ++counts[r.quality_label];
  return counts;
}

std::map<Split, std::size_t> DatasetManifest::count_by_split() const {
  std::map<Split, std::size_t> counts;
  for (const auto& r : records) ++counts[r.split];
  return counts;
}

std::vector<ManifestRecord> DatasetManifest::select(Split split, std::optional<int> quality) const {
  std::vector<ManifestRecord> out;
  for (const auto& r : records) {
    if (r.split != split) continue;
    if (quality && r.quality_label != *quality) continue;
    out.push_back(r);
  }
  return out;
}

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (char c : line) {
    if (c == '"') {
      quoted = !quoted;
    } else if (c == ',' && !quoted) {
      fields.push_back(trim(field));
      field.clear();
    } else {
      field.push_back(c);
    }
  }
  fields.push_back(trim(field));
  return fields;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

bool is_integer(const std::string& s) {
  if (s.empty()) return false;
  std::size_t i = (s[0] == '-' || s[0] == '+') ? 1 : 0;
  if (i == s.size()) return false;
  return std::all_of(s.begin() + static_cast<std::ptrdiff_t>(i), s.end(),
                     [](unsigned char c) { return std::isdigit(c); });
}

int parse_binary_label(const std::string& value, const fs::path& file, std::size_t line_no,
                       std::string_view what) {
  if (value == "0") return 0;
  if (value == "1") return 1;
  throw FormatError(file.string() + ":" + std::to_string(line_no) + ": " + std::string(what) +
                    " label must be 0 or 1, got '" + value + "'");
}

struct LabelColumns {
  std::size_t file = 0;
  std::size_t quality = 1;
  std::optional<std::size_t> dr = 2;
};

std::optional<LabelColumns> header_columns(const std::vector<std::string>& fields) {
  if (fields.size() >= 2 && is_integer(fields[1])) return std::nullopt;
  LabelColumns cols;
  cols.dr.reset();
  bool have_quality = false;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    const std::string name = lower(fields[i]);
    if (name == "path" || name == "file" || name == "filename" || name == "image" || name == "image_id") {
      cols.file = i;
    } else if (name == "quality" || name == "overall quality" || name == "quality_label") {
      cols.quality = i;
      have_quality = true;
    } else if (name == "dr" || name == "dr_label") {
      cols.dr = i;
    }
  }
  if (!have_quality) cols.quality = 1;
  return cols;
}

fs::path resolve_image(const fs::path& root, const std::string& name) {
  fs::path p = root / name;
  if (fs::exists(p) || p.has_extension()) return p;
  for (const char* ext : {".png", ".jpg", ".jpeg", ".bmp", ".tif"}) {
    fs::path candidate = p;
    candidate += ext;
    if (fs::exists(candidate)) return candidate;
  }
  return p;
}

void sort_and_shuffle(std::vector<ManifestRecord>& records, std::uint64_t seed) {
  std::sort(records.begin(), records.end(),
            [](const ManifestRecord& a, const ManifestRecord& b) { return a.path < b.path; });
  std::mt19937_64 rng(seed);
  std::shuffle(records.begin(), records.end(), rng);
}

fs::path normalized_absolute(const fs::path& p) { return fs::absolute(p).lexically_normal(); }

}  // namespace

DatasetManifest load_manifest(const fs::path& root, const fs::path& labels, std::uint64_t seed) {
  std::ifstream in(labels);
  if (!in) throw FormatError(labels.string() + ":0: cannot read label file");

  DatasetManifest manifest;
  manifest.source_id = normalized_absolute(root).filename().string();
  manifest.seed = seed;

  LabelColumns cols;
  std::set<fs::path> seen;
  std::string line;
  std::size_t line_no = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    auto fields = split_csv(line);
    if (first) {
      first = false;
      if (auto header = header_columns(fields)) {
        cols = *header;
        continue;
      }
    }
    if (fields.size() <= std::max(cols.file, cols.quality)) {
      throw FormatError(labels.string() + ":" + std::to_string(line_no) +
                        ": expected at least filename and quality columns");
    }
    ManifestRecord record;
    if (fields[cols.file].empty()) {
      throw FormatError(labels.string() + ":" + std::to_string(line_no) + ": empty filename");
    }
    record.path = normalized_absolute(resolve_image(root, fields[cols.file]));
    record.quality_label = parse_binary_label(fields[cols.quality], labels, line_no, "quality");
    if (cols.dr && *cols.dr < fields.size() && !fields[*cols.dr].empty()) {
      record.dr_label = parse_binary_label(fields[*cols.dr], labels, line_no, "dr");
    }
    if (!fs::exists(record.path)) {
      throw InputError("labelled image not found: " + record.path.string() + " (" + labels.string() +
                       ":" + std::to_string(line_no) + ")");
    }
    if (!seen.insert(record.path).second) {
      throw FormatError(labels.string() + ":" + std::to_string(line_no) + ": duplicate entry for " +
                        record.path.string());
    }
    manifest.records.push_back(std::move(record));
  }
  sort_and_shuffle(manifest.records, seed);
  return manifest;
}

std::array<std::size_t, 3> split_sizes(std::size_t total, const SplitFractions& f) {
  const std::array<double, 3> fr{f.train, f.val, f.test};
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> remainder{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double exact = fr[i] * static_cast<double>(total);
    sizes[i] = static_cast<std::size_t>(std::floor(exact));
    remainder[i] = exact - std::floor(exact);
    assigned += sizes[i];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t k = 0; assigned < total; k = (k + 1) % 3) {
    ++sizes[order[k]];
    ++assigned;
  }
  return sizes;
}

DatasetManifest build_splits(const DatasetManifest& manifest, const SplitFractions& f, std::uint64_t seed,
                             const SplitOptions& options) {
  for (double v : {f.train, f.val, f.test}) {
    if (!std::isfinite(v) || v < 0.0) throw ConfigError("split fractions must be finite and non-negative");
  }
  if (std::abs(f.train + f.val + f.test - 1.0) > 1e-9) {
    throw ConfigError("split fractions must sum to 1");
  }
  if (manifest.records.empty()) throw InputError("cannot split an empty manifest");

  DatasetManifest out = manifest;
  out.seed = seed;
  const std::size_t n = out.records.size();
  const auto sizes = split_sizes(n, f);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<bool> taken(n, false);
  std::size_t n_test = 0;
  if (options.test_high_only) {
    for (std::size_t idx : order) {
      if (n_test == sizes[2]) break;
      if (out.records[idx].quality_label == 1) {
        out.records[idx].split = Split::Test;
        taken[idx] = true;
        ++n_test;
      }
    }
  }
  std::size_t n_train = 0;
  std::size_t n_val = 0;
  for (std::size_t idx : order) {
    if (taken[idx]) continue;
    auto& rec = out.records[idx];
    if (n_train < sizes[0]) {
      rec.split = Split::Train;
      ++n_train;
    } else if (n_val < sizes[1]) {
      rec.split = Split::Val;
      ++n_val;
    } else if (!options.test_high_only && n_test < sizes[2]) {
      rec.split = Split::Test;
      ++n_test;
    } else {
      // Only reachable with test_high_only when too few high-quality records exist.
      rec.split = Split::Train;
      ++n_train;
    }
  }
  return out;
}

std::string serialize_manifest(const DatasetManifest& manifest, const fs::path& base_dir) {
  const fs::path base = normalized_absolute(base_dir);
  std::ostringstream os;
  json header;
  header["manifest"] = {{"source_id", manifest.source_id},
                        {"seed", manifest.seed},
                        {"config_digest", manifest.config_digest}};
  os << header.dump() << '\n';
  for (const auto& r : manifest.records) {
    json j;
    j["path"] = normalized_absolute(r.path).lexically_relative(base).generic_string();
    j["quality"] = r.quality_label;
    j["dr"] = r.dr_label ? json(*r.dr_label) : json(nullptr);
    j["split"] = to_string(r.split);
    os << j.dump() << '\n';
  }
  return os.str();
}

void write_manifest(const DatasetManifest& manifest, const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  write_text_file(file, serialize_manifest(manifest, file.has_parent_path() ? file.parent_path() : "."));
}

DatasetManifest read_manifest(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw InputError("cannot read manifest: " + file.string());
  const fs::path base = normalized_absolute(file).parent_path();
  DatasetManifest manifest;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw FormatError(file.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    try {
      if (j.contains("manifest")) {
        const auto& h = j.at("manifest");
        manifest.source_id = h.value("source_id", "");
        manifest.seed = h.value("seed", std::uint64_t{0});
        manifest.config_digest = h.value("config_digest", "");
        continue;
      }
      ManifestRecord r;
      r.path = (base / j.at("path").get<std::string>()).lexically_normal();
      r.quality_label = j.at("quality").get<int>();
      if (j.contains("dr") && !j.at("dr").is_null()) r.dr_label = j.at("dr").get<int>();
      r.split = parse_split(j.at("split").get<std::string>());
      manifest.records.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw FormatError(file.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const FormatError& e) {
      throw FormatError(file.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return manifest;
}

PassDataset pass_dataset_from_manifest(const DatasetManifest& manifest) {
  PassDataset d;
  d.pass_index = 0;
  d.low_set = manifest.select(Split::Train, 0);
  d.val_low_set = manifest.select(Split::Val, 0);
  d.high_set = manifest.select(Split::Train, 1);
  return d;
}

}  // namespace ptl::data
