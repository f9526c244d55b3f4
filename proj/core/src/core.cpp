#include "mizero/core.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <unordered_set>

#include "mizero/error.hpp"
#include "mizero/hash.hpp"

namespace mizero {

namespace {
constexpr double kZeroNormThreshold = 1e-12;
}

double l2_norm(std::span<const float> v) {
  double sum = 0.0;
  for (float x : v) sum += static_cast<double>(x) * static_cast<double>(x);
  return std::sqrt(sum);
}

double l2_norm(std::span<const double> v) {
  double sum = 0.0;
  for (double x : v) sum += x * x;
  return std::sqrt(sum);
}

std::vector<float> normalize(std::span<const float> v) {
  const double norm = l2_norm(v);
  if (!(norm >= kZeroNormThreshold)) {
    raise(ErrorCode::ZeroVector, "cannot normalize vector with norm " +
                                     std::to_string(norm));
  }
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = static_cast<float>(static_cast<double>(v[i]) / norm);
  }
  return out;
}

std::vector<double> normalize(std::span<const double> v) {
  const double norm = l2_norm(v);
  if (!(norm >= kZeroNormThreshold)) {
    raise(ErrorCode::ZeroVector, "cannot normalize vector with norm " +
                                     std::to_string(norm));
  }
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / norm;
  return out;
}

void SlideBag::validate() const {
  if (patch_count() < 1 || dim() < 1) {
    raise(ErrorCode::DimensionMismatch,
          "bag '" + slide_id + "' must have N >= 1 and D >= 1");
  }
  for (float x : embeddings.storage()) {
    if (!std::isfinite(x)) {
      raise(ErrorCode::NonFinite,
            "bag '" + slide_id + "' contains a non-finite embedding value");
    }
  }
  if (coords && coords->size() != patch_count()) {
    raise(ErrorCode::SizeMismatch,
          "bag '" + slide_id + "' has " + std::to_string(coords->size()) +
              " coords for " + std::to_string(patch_count()) + " patches");
  }
}

SlideBag SlideBag::normalized() const {
  SlideBag out = *this;
  for (std::size_t i = 0; i < patch_count(); ++i) {
    const auto unit = normalize(embeddings.row(i));
    auto dst = out.embeddings.row(i);
    std::copy(unit.begin(), unit.end(), dst.begin());
  }
  return out;
}

void ZeroShotClassifier::validate(double row_tolerance) const {
  if (num_classes() < 2) {
    raise(ErrorCode::DimensionMismatch, "classifier needs at least 2 classes");
  }
  if (class_labels.size() != num_classes()) {
    raise(ErrorCode::SizeMismatch, "classifier has " +
                                       std::to_string(class_labels.size()) +
                                       " labels for " +
                                       std::to_string(num_classes()) +
                                       " weight rows");
  }
  std::unordered_set<std::string> seen;
  for (const auto& label : class_labels) {
    if (!seen.insert(label).second) {
      raise(ErrorCode::InvalidLabel, "duplicate class label '" + label + "'");
    }
  }
  for (std::size_t c = 0; c < num_classes(); ++c) {
    const double norm = l2_norm(weights.row(c));
    if (std::abs(norm - 1.0) > row_tolerance) {
      raise(ErrorCode::NonUnitRow,
            "classifier row " + std::to_string(c) + " has norm " +
                std::to_string(norm));
    }
  }
}

void DatasetManifest::validate() const {
  if (classes.empty()) {
    raise(ErrorCode::BadFormat, "manifest has no classes");
  }
  std::unordered_set<std::string> ids;
  for (const auto& entry : slides) {
    if (!ids.insert(entry.slide_id).second) {
      raise(ErrorCode::DuplicateSlideId,
            "duplicate slide id '" + entry.slide_id + "'");
    }
    if (entry.label >= classes.size()) {
      raise(ErrorCode::InvalidLabel,
            "slide '" + entry.slide_id + "' has label " +
                std::to_string(entry.label) + " but manifest declares " +
                std::to_string(classes.size()) + " classes");
    }
  }
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(value));
  return std::string(buf);
}

std::string hash_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    raise(ErrorCode::FileNotFound, "cannot open '" + path.string() + "'");
  }
  std::uint64_t h = 0xCBF29CE484222325ull;
  char buf[65536];
  while (in) {
    in.read(buf, sizeof(buf));
    const std::streamsize got = in.gcount();
    for (std::streamsize i = 0; i < got; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001B3ull;
    }
  }
  return "fnv1a64:" + hex64(h);
}

}  // namespace mizero
