#include "mizero/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mizero/error.hpp"

namespace mizero {

using ordered_json = nlohmann::ordered_json;

namespace {

constexpr std::uint32_t kFormatVersion = 1;

// --- little-endian primitives -------------------------------------------

void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
  out.push_back(static_cast<char>((v >> 16) & 0xFF));
  out.push_back(static_cast<char>((v >> 24) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  put_u32(out, static_cast<std::uint32_t>(v & 0xFFFFFFFFull));
  put_u32(out, static_cast<std::uint32_t>(v >> 32));
}

void put_f32(std::string& out, float v) {
  put_u32(out, std::bit_cast<std::uint32_t>(v));
}

void put_i32(std::string& out, std::int32_t v) {
  put_u32(out, static_cast<std::uint32_t>(v));
}

class ByteReader {
 public:
  ByteReader(const std::string& bytes, std::string name)
      : bytes_(bytes), name_(std::move(name)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) {
      v = (v << 8) | static_cast<unsigned char>(bytes_[pos_ + i]);
    }
    pos_ += 4;
    return v;
  }

  std::uint64_t u64() {
    const std::uint64_t lo = u32();
    const std::uint64_t hi = u32();
    return lo | (hi << 32);
  }

  float f32() { return std::bit_cast<float>(u32()); }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }

  void magic(const char expected[4]) {
    need(4);
    if (std::memcmp(bytes_.data() + pos_, expected, 4) != 0) {
      raise(ErrorCode::BadMagic,
            name_ + ": expected magic '" + std::string(expected, 4) + "'");
    }
    pos_ += 4;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) {
    if (bytes_.size() - pos_ < n) {
      raise(ErrorCode::TruncatedFile,
            name_ + ": ends " + std::to_string(n - (bytes_.size() - pos_)) +
                " bytes short");
    }
  }

  const std::string& bytes_;
  std::string name_;
  std::size_t pos_ = 0;
};

std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    raise(ErrorCode::FileNotFound, "cannot open '" + path.string() + "'");
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return std::move(buf).str();
}

void write_file_bytes(const std::filesystem::path& path,
                      const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    raise(ErrorCode::FileNotFound, "cannot create '" + path.string() + "'");
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    raise(ErrorCode::TruncatedFile, "short write to '" + path.string() + "'");
  }
}

/// rows*cols*4 with overflow and allocation-cap checks.
std::uint64_t payload_bytes(std::uint64_t rows, std::uint64_t cols,
                            const IoLimits& limits, const std::string& name) {
  if (cols != 0 && rows > UINT64_MAX / cols) {
    raise(ErrorCode::AllocationCap, name + ": size overflows");
  }
  const std::uint64_t cells = rows * cols;
  if (cells > UINT64_MAX / 4) {
    raise(ErrorCode::AllocationCap, name + ": size overflows");
  }
  const std::uint64_t bytes = cells * 4;
  if (bytes > limits.max_payload_bytes) {
    raise(ErrorCode::AllocationCap,
          name + ": payload of " + std::to_string(bytes) +
              " bytes exceeds the configured cap");
  }
  return bytes;
}

ordered_json parse_json_file(const std::filesystem::path& path) {
  const std::string text = read_file_bytes(path);
  ordered_json doc = ordered_json::parse(text, nullptr, false);
  if (doc.is_discarded()) {
    raise(ErrorCode::BadFormat, "'" + path.string() + "' is not valid JSON");
  }
  return doc;
}

std::vector<float> json_to_floats(const ordered_json& arr,
                                  const std::string& context) {
  if (!arr.is_array()) {
    raise(ErrorCode::BadFormat, context + ": expected an array of numbers");
  }
  std::vector<float> out;
  out.reserve(arr.size());
  for (const auto& v : arr) {
    if (!v.is_number()) {
      raise(ErrorCode::BadFormat, context + ": non-numeric entry");
    }
    out.push_back(static_cast<float>(v.get<double>()));
  }
  return out;
}

ordered_json floats_to_json(std::span<const float> row) {
  ordered_json arr = ordered_json::array();
  for (float v : row) {
    if (!std::isfinite(v)) {
      raise(ErrorCode::NonFinite, "refusing to serialize non-finite value");
    }
    arr.push_back(static_cast<double>(v));
  }
  return arr;
}

}  // namespace

// --- MIZB bags ------------------------------------------------------------

SlideBag read_bag(const std::filesystem::path& path, const IoLimits& limits) {
  const std::string bytes = read_file_bytes(path);
  ByteReader r(bytes, path.filename().string());
  r.magic("MIZB");
  const std::uint32_t version = r.u32();
  if (version != kFormatVersion) {
    raise(ErrorCode::UnsupportedVersion,
          path.filename().string() + ": bag version " +
              std::to_string(version) + " is not supported");
  }
  const std::uint32_t flags = r.u32();
  const std::uint64_t n = r.u64();
  const std::uint32_t d = r.u32();
  if (n < 1 || d < 1) {
    raise(ErrorCode::DimensionMismatch,
          path.filename().string() + ": bag header declares N=" +
              std::to_string(n) + ", D=" + std::to_string(d));
  }
  payload_bytes(n, d, limits, path.filename().string());

  SlideBag bag;
  bag.slide_id = path.stem().string();
  bag.embeddings = MatrixF(static_cast<std::size_t>(n), d);
  for (float& x : bag.embeddings.storage()) x = r.f32();

  if (flags & 1u) {
    auto& coords = bag.coords.emplace();
    coords.resize(static_cast<std::size_t>(n));
    for (auto& c : coords) {
      c.col = r.i32();
      c.row = r.i32();
    }
  }
  return bag;
}

void write_bag(const SlideBag& bag, const std::filesystem::path& path) {
  bag.validate();
  std::string out;
  out.reserve(24 + bag.embeddings.storage().size() * 4 +
              (bag.coords ? bag.coords->size() * 8 : 0));
  out.append("MIZB");
  put_u32(out, kFormatVersion);
  put_u32(out, bag.coords ? 1u : 0u);
  put_u64(out, bag.patch_count());
  put_u32(out, static_cast<std::uint32_t>(bag.dim()));
  for (float x : bag.embeddings.storage()) put_f32(out, x);
  if (bag.coords) {
    for (const auto& c : *bag.coords) {
      put_i32(out, c.col);
      put_i32(out, c.row);
    }
  }
  write_file_bytes(path, out);
}

// --- MIZP paired embeddings -------------------------------------------------

void PairedEmbeddingSet::validate() const {
  if (image.rows() != text.rows()) {
    raise(ErrorCode::SizeMismatch,
          "paired set has " + std::to_string(image.rows()) + " image rows vs " +
              std::to_string(text.rows()) + " text rows");
  }
  if (pair_count() < 2) {
    raise(ErrorCode::DimensionMismatch,
          "paired set needs at least 2 pairs for training");
  }
  for (float x : image.storage()) {
    if (!std::isfinite(x)) {
      raise(ErrorCode::NonFinite, "paired set has a non-finite image value");
    }
  }
  for (float x : text.storage()) {
    if (!std::isfinite(x)) {
      raise(ErrorCode::NonFinite, "paired set has a non-finite text value");
    }
  }
}

PairedEmbeddingSet read_paired(const std::filesystem::path& path,
                               const IoLimits& limits) {
  const std::string bytes = read_file_bytes(path);
  ByteReader r(bytes, path.filename().string());
  r.magic("MIZP");
  const std::uint32_t version = r.u32();
  if (version != kFormatVersion) {
    raise(ErrorCode::UnsupportedVersion,
          path.filename().string() + ": paired-set version " +
              std::to_string(version) + " is not supported");
  }
  const std::uint64_t m = r.u64();
  const std::uint32_t d_img = r.u32();
  const std::uint32_t d_txt = r.u32();
  if (m < 1 || d_img < 1 || d_txt < 1) {
    raise(ErrorCode::DimensionMismatch,
          path.filename().string() + ": paired header declares M=" +
              std::to_string(m) + ", D_img=" + std::to_string(d_img) +
              ", D_txt=" + std::to_string(d_txt));
  }
  payload_bytes(m, d_img, limits, path.filename().string());
  payload_bytes(m, d_txt, limits, path.filename().string());

  PairedEmbeddingSet pairs;
  pairs.image = MatrixF(static_cast<std::size_t>(m), d_img);
  pairs.text = MatrixF(static_cast<std::size_t>(m), d_txt);
  for (float& x : pairs.image.storage()) x = r.f32();
  for (float& x : pairs.text.storage()) x = r.f32();
  return pairs;
}

void write_paired(const PairedEmbeddingSet& pairs,
                  const std::filesystem::path& path) {
  pairs.validate();
  std::string out;
  out.reserve(24 + (pairs.image.storage().size() + pairs.text.storage().size()) * 4);
  out.append("MIZP");
  put_u32(out, kFormatVersion);
  put_u64(out, pairs.pair_count());
  put_u32(out, static_cast<std::uint32_t>(pairs.image.cols()));
  put_u32(out, static_cast<std::uint32_t>(pairs.text.cols()));
  for (float x : pairs.image.storage()) put_f32(out, x);
  for (float x : pairs.text.storage()) put_f32(out, x);
  write_file_bytes(path, out);
}

// --- text-embedding table ---------------------------------------------------

const std::vector<float>* TextEmbeddingTable::find(
    const std::string& text) const {
  const auto it = entries.find(text);
  return it == entries.end() ? nullptr : &it->second;
}

TextEmbeddingTable read_text_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    raise(ErrorCode::FileNotFound, "cannot open '" + path.string() + "'");
  }
  TextEmbeddingTable table;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    ordered_json rec = ordered_json::parse(line, nullptr, false);
    const std::string where =
        path.filename().string() + ":" + std::to_string(lineno);
    if (rec.is_discarded() || !rec.is_object() || !rec.contains("text") ||
        !rec.contains("embedding") || !rec["text"].is_string()) {
      raise(ErrorCode::BadFormat, where + ": expected {\"text\", \"embedding\"}");
    }
    std::string text = rec["text"].get<std::string>();
    std::vector<float> vec = json_to_floats(rec["embedding"], where);
    if (vec.empty()) {
      raise(ErrorCode::BadFormat, where + ": empty embedding");
    }
    if (table.dim == 0) {
      table.dim = vec.size();
    } else if (vec.size() != table.dim) {
      raise(ErrorCode::RaggedDimensions,
            where + ": embedding of dimension " + std::to_string(vec.size()) +
                " in a table of dimension " + std::to_string(table.dim));
    }
    const auto [it, inserted] = table.entries.emplace(std::move(text), vec);
    if (!inserted && it->second != vec) {
      raise(ErrorCode::DuplicateText,
            where + ": text '" + it->first + "' re-declared with a different vector");
    }
  }
  return table;
}

void write_text_table(const TextEmbeddingTable& table,
                      const std::filesystem::path& path) {
  // Sorted by text so the file is deterministic.
  std::vector<const std::string*> keys;
  keys.reserve(table.entries.size());
  for (const auto& [text, vec] : table.entries) keys.push_back(&text);
  std::sort(keys.begin(), keys.end(),
            [](const std::string* a, const std::string* b) { return *a < *b; });

  std::string out;
  for (const std::string* key : keys) {
    ordered_json rec;
    rec["text"] = *key;
    rec["embedding"] = floats_to_json(table.entries.at(*key));
    out += rec.dump();
    out += '\n';
  }
  write_file_bytes(path, out);
}

// --- classifier document ------------------------------------------------------

ZeroShotClassifier read_classifier(const std::filesystem::path& path) {
  const ordered_json doc = parse_json_file(path);
  if (!doc.is_object() || doc.value("format", "") != "mizero-classifier") {
    raise(ErrorCode::BadMagic,
          "'" + path.string() + "' is not a classifier document");
  }
  if (doc.value("version", 0) != static_cast<int>(kFormatVersion)) {
    raise(ErrorCode::UnsupportedVersion,
          "'" + path.string() + "' has an unsupported classifier version");
  }

  ZeroShotClassifier clf;
  if (!doc.contains("class_labels") || !doc.contains("weights")) {
    raise(ErrorCode::BadFormat,
          "'" + path.string() + "' is missing class_labels or weights");
  }
  for (const auto& label : doc["class_labels"]) {
    clf.class_labels.push_back(label.get<std::string>());
  }
  const auto& rows = doc["weights"];
  if (!rows.is_array() || rows.empty()) {
    raise(ErrorCode::BadFormat, "'" + path.string() + "' has no weight rows");
  }
  std::vector<std::vector<float>> parsed;
  parsed.reserve(rows.size());
  for (const auto& row : rows) {
    parsed.push_back(json_to_floats(row, path.filename().string()));
    if (parsed.back().size() != parsed.front().size()) {
      raise(ErrorCode::RaggedDimensions,
            "'" + path.string() + "' has ragged weight rows");
    }
  }
  clf.weights = MatrixF(parsed.size(), parsed.front().size());
  for (std::size_t c = 0; c < parsed.size(); ++c) {
    std::copy(parsed[c].begin(), parsed[c].end(), clf.weights.row(c).begin());
  }

  if (doc.contains("trial_seed") && !doc["trial_seed"].is_null()) {
    clf.trial_seed = doc["trial_seed"].get<std::uint64_t>();
  }
  if (doc.contains("provenance")) {
    for (const auto& entry : doc["provenance"]) {
      ClassProvenance p;
      for (const auto& name : entry.value("classnames", ordered_json::array())) {
        p.classnames.push_back(name.get<std::string>());
      }
      for (const auto& t : entry.value("templates", ordered_json::array())) {
        p.templates.push_back(t.get<std::string>());
      }
      clf.provenance.push_back(std::move(p));
    }
  }

  for (std::size_t c = 0; c < clf.num_classes(); ++c) {
    const double norm = l2_norm(clf.weights.row(c));
    if (std::abs(norm - 1.0) > 1e-4) {
      raise(ErrorCode::NonUnitRow,
            "'" + path.string() + "' row " + std::to_string(c) +
                " has norm " + std::to_string(norm));
    }
  }
  if (clf.class_labels.size() != clf.num_classes()) {
    raise(ErrorCode::SizeMismatch,
          "'" + path.string() + "' label/row count mismatch");
  }
  return clf;
}

void write_classifier(const ZeroShotClassifier& clf,
                      const std::filesystem::path& path) {
  clf.validate(1e-4);
  ordered_json doc;
  doc["format"] = "mizero-classifier";
  doc["version"] = kFormatVersion;
  doc["class_labels"] = clf.class_labels;
  if (clf.trial_seed) {
    doc["trial_seed"] = *clf.trial_seed;
  } else {
    doc["trial_seed"] = nullptr;
  }
  ordered_json provenance = ordered_json::array();
  for (const auto& p : clf.provenance) {
    ordered_json entry;
    entry["classnames"] = p.classnames;
    entry["templates"] = p.templates;
    provenance.push_back(std::move(entry));
  }
  doc["provenance"] = std::move(provenance);
  ordered_json rows = ordered_json::array();
  for (std::size_t c = 0; c < clf.num_classes(); ++c) {
    rows.push_back(floats_to_json(clf.weights.row(c)));
  }
  doc["weights"] = std::move(rows);
  write_file_bytes(path, doc.dump(2) + "\n");
}

// --- dataset manifest ---------------------------------------------------------

DatasetManifest read_manifest(const std::filesystem::path& path) {
  const ordered_json doc = parse_json_file(path);
  if (!doc.is_object() || !doc.contains("classes") || !doc.contains("slides")) {
    raise(ErrorCode::BadFormat,
          "'" + path.string() + "' is not a dataset manifest");
  }
  DatasetManifest manifest;
  for (const auto& c : doc["classes"]) {
    manifest.classes.push_back(c.get<std::string>());
  }
  for (const auto& s : doc["slides"]) {
    if (!s.contains("slide_id") || !s.contains("path") || !s.contains("label")) {
      raise(ErrorCode::BadFormat,
            "'" + path.string() + "' slide entry missing slide_id/path/label");
    }
    ManifestEntry entry;
    entry.slide_id = s["slide_id"].get<std::string>();
    entry.path = s["path"].get<std::string>();
    entry.label = s["label"].get<std::size_t>();
    manifest.slides.push_back(std::move(entry));
  }
  manifest.validate();
  for (const auto& entry : manifest.slides) {
    const auto resolved = resolve_manifest_path(path, entry);
    if (!std::filesystem::exists(resolved)) {
      raise(ErrorCode::FileNotFound,
            "manifest references missing bag '" + resolved.string() + "'");
    }
  }
  return manifest;
}

void write_manifest(const DatasetManifest& manifest,
                    const std::filesystem::path& path) {
  manifest.validate();
  ordered_json doc;
  doc["format"] = "mizero-manifest";
  doc["version"] = kFormatVersion;
  doc["classes"] = manifest.classes;
  ordered_json slides = ordered_json::array();
  for (const auto& entry : manifest.slides) {
    ordered_json s;
    s["slide_id"] = entry.slide_id;
    s["path"] = entry.path;
    s["label"] = entry.label;
    slides.push_back(std::move(s));
  }
  doc["slides"] = std::move(slides);
  write_file_bytes(path, doc.dump(2) + "\n");
}

std::filesystem::path resolve_manifest_path(
    const std::filesystem::path& manifest_path, const ManifestEntry& entry) {
  std::filesystem::path p(entry.path);
  if (p.is_absolute()) return p;
  return manifest_path.parent_path() / p;
}

}  // namespace mizero
