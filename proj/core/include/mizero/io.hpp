#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "mizero/core.hpp"

namespace mizero {

/// Readers refuse to allocate payloads larger than this cap so malformed
/// headers fail cleanly instead of exhausting memory.
struct IoLimits {
  std::uint64_t max_payload_bytes = 16ull << 30;  // 16 GiB
};

// ---------------------------------------------------------------------------
// Binary formats (little-endian).
//
// Bag file "MIZB":
//   magic   4 bytes  "MIZB"
//   version u32      1
//   flags   u32      bit0 = coords present
//   N       u64      patches
//   D       u32      embedding dimension
//   N*D float32, row-major patch embeddings
//   [flags bit0] N*2 int32 grid coords (col, row)
//
// Paired-embedding file "MIZP":
//   magic   4 bytes  "MIZP"
//   version u32      1
//   M       u64      pairs
//   D_img   u32
//   D_txt   u32
//   M*D_img float32 image embeddings, then M*D_txt float32 text embeddings
// ---------------------------------------------------------------------------

/// Reads a bag exactly as stored; no normalization. slide_id defaults to
/// the file stem and label is left unset (the manifest owns both).
SlideBag read_bag(const std::filesystem::path& path, const IoLimits& limits = {});
void write_bag(const SlideBag& bag, const std::filesystem::path& path);

/// Row-aligned image/text embedding pairs for the alignment trainer.
struct PairedEmbeddingSet {
  MatrixF image;  // M x D_img
  MatrixF text;   // M x D_txt

  std::size_t pair_count() const noexcept { return image.rows(); }
  void validate() const;
};

PairedEmbeddingSet read_paired(const std::filesystem::path& path,
                               const IoLimits& limits = {});
void write_paired(const PairedEmbeddingSet& pairs,
                  const std::filesystem::path& path);

/// Exact-string lookup table, prompt text -> embedding. Stands in for a
/// frozen text encoder.
struct TextEmbeddingTable {
  std::unordered_map<std::string, std::vector<float>> entries;
  std::size_t dim = 0;

  std::size_t size() const noexcept { return entries.size(); }
  const std::vector<float>* find(const std::string& text) const;
};

/// Line-delimited records {"text": ..., "embedding": [...]}. Re-stating an
/// identical record is accepted; the same text with a different vector is
/// DuplicateText and mixed dimensions are RaggedDimensions.
TextEmbeddingTable read_text_table(const std::filesystem::path& path);
void write_text_table(const TextEmbeddingTable& table,
                      const std::filesystem::path& path);

/// Human-inspectable JSON classifier document. Weight rows re-checked for
/// unit norm on read (NonUnitRow beyond 1e-4).
ZeroShotClassifier read_classifier(const std::filesystem::path& path);
void write_classifier(const ZeroShotClassifier& clf,
                      const std::filesystem::path& path);

/// JSON manifest listing classes and (slide_id, path, label) entries.
/// Relative bag paths resolve against the manifest's directory.
DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const DatasetManifest& manifest,
                    const std::filesystem::path& path);

/// Bag path of a manifest entry resolved against the manifest location.
std::filesystem::path resolve_manifest_path(
    const std::filesystem::path& manifest_path, const ManifestEntry& entry);

}  // namespace mizero
