#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "mizero/core.hpp"
#include "mizero/io.hpp"
#include "mizero/prompts.hpp"

namespace mizero {

/// Parameters for one planted-signal bag: ceil(signal_fraction * n_patches)
/// patches carry the class direction plus gaussian noise, the rest are
/// normalized gaussian vectors.
struct PlantedBagSpec {
  std::size_t n_patches = 0;
  std::size_t dim = 0;
  double signal_fraction = 0.0;  // in (0, 1]
  double noise_sigma = 0.0;
  std::size_t class_index = 0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct PlantedDataset {
  DatasetManifest manifest;  // entry paths are "bags/<slide_id>.mizb"
  std::vector<SlideBag> bags;
  ZeroShotClassifier classifier;  // the planted orthonormal directions
};

/// One bag per spec draw: signal patches are normalize(w_c + sigma * g),
/// the rest normalize(g). Coordinates fill a near-square grid row-major,
/// so the signal block (the first rows) is spatially contiguous.
SlideBag make_planted_bag(const PlantedBagSpec& spec,
                          std::span<const float> class_direction);

/// Classifier rows are C random orthonormal directions; slide s of class c
/// is generated from the per-slide seed derive_seed(seed, c*n_slides + s).
PlantedDataset make_planted_dataset(std::span<const PlantedBagSpec> class_specs,
                                    std::size_t slides_per_class,
                                    std::uint64_t seed);

/// Synthetic prompt pool plus a text table whose instantiated prompt
/// embeddings are normalize(w_c + text_noise * g); ensembled rows land
/// near the planted directions.
struct SyntheticPrompts {
  PromptPool pool;
  TextEmbeddingTable table;
};

SyntheticPrompts make_synthetic_prompts(const ZeroShotClassifier& classifier,
                                        std::size_t templates_per_pool,
                                        std::size_t names_per_class,
                                        double text_noise, std::uint64_t seed);

/// Writes manifest.json, bags/, classifier.json, pool.json and
/// text_table.jsonl under `dir`; returns the manifest path.
std::filesystem::path write_planted_dataset(const PlantedDataset& dataset,
                                            const SyntheticPrompts& prompts,
                                            const std::filesystem::path& dir);

struct PairedLatentSet {
  PairedEmbeddingSet pairs;
  MatrixD image_map;  // D_img x D_latent ground truth
  MatrixD text_map;   // D_txt x D_latent
};

/// Shared gaussian latents pushed through fixed random full-rank maps:
/// image row = A z + noise * g, text row = B z + noise * g'.
PairedLatentSet make_paired_latent(std::size_t m, std::size_t d_img,
                                   std::size_t d_txt, std::size_t d_latent,
                                   double noise, std::uint64_t seed);

/// C orthonormal rows from seeded gaussians (Gram-Schmidt). Requires
/// n_classes <= dim.
MatrixF random_orthonormal_rows(std::size_t n_classes, std::size_t dim,
                                std::uint64_t seed);

}  // namespace mizero
