#include "mizero/synth.hpp"

#include <cmath>
#include <cstdio>

#include "mizero/error.hpp"
#include "mizero/rng.hpp"

namespace mizero {

namespace {

std::vector<float> to_unit_f32(std::span<const double> v) {
  const auto unit = normalize(v);
  std::vector<float> out(unit.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<float>(unit[i]);
  }
  return out;
}

std::string slide_name(std::size_t class_index, std::size_t slide_index) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "class%zu_slide%03zu", class_index,
                slide_index);
  return std::string(buf);
}

}  // namespace

void PlantedBagSpec::validate() const {
  if (n_patches < 1 || dim < 1) {
    raise(ErrorCode::InvalidArgument, "planted bag needs N >= 1 and D >= 1");
  }
  if (!(signal_fraction > 0.0) || signal_fraction > 1.0) {
    raise(ErrorCode::InvalidArgument, "signal fraction must be in (0, 1]");
  }
  if (!(noise_sigma >= 0.0)) {
    raise(ErrorCode::InvalidArgument, "noise sigma must be >= 0");
  }
}

MatrixF random_orthonormal_rows(std::size_t n_classes, std::size_t dim,
                                std::uint64_t seed) {
  if (n_classes > dim) {
    raise(ErrorCode::InvalidArgument,
          "cannot fit " + std::to_string(n_classes) +
              " orthonormal rows in dimension " + std::to_string(dim));
  }
  SplitMix64 rng(seed);
  MatrixD rows(n_classes, dim);
  for (double& x : rows.storage()) x = rng.next_gaussian();

  // Gram-Schmidt with re-normalization.
  for (std::size_t c = 0; c < n_classes; ++c) {
    auto row = rows.row(c);
    for (std::size_t prev = 0; prev < c; ++prev) {
      const auto p = rows.row(prev);
      double dot = 0.0;
      for (std::size_t j = 0; j < dim; ++j) dot += row[j] * p[j];
      for (std::size_t j = 0; j < dim; ++j) row[j] -= dot * p[j];
    }
    const auto unit =
        normalize(std::span<const double>(row.data(), row.size()));
    std::copy(unit.begin(), unit.end(), row.begin());
  }

  MatrixF out(n_classes, dim);
  for (std::size_t i = 0; i < rows.storage().size(); ++i) {
    out.storage()[i] = static_cast<float>(rows.storage()[i]);
  }
  return out;
}

SlideBag make_planted_bag(const PlantedBagSpec& spec,
                          std::span<const float> class_direction) {
  spec.validate();
  if (class_direction.size() != spec.dim) {
    raise(ErrorCode::DimensionMismatch,
          "class direction dimension does not match the bag spec");
  }
  const std::size_t n_signal = static_cast<std::size_t>(
      std::ceil(spec.signal_fraction * static_cast<double>(spec.n_patches)));

  SlideBag bag;
  bag.embeddings = MatrixF(spec.n_patches, spec.dim);
  bag.label = spec.class_index;

  SplitMix64 rng(spec.seed);
  std::vector<double> v(spec.dim);
  for (std::size_t i = 0; i < spec.n_patches; ++i) {
    if (i < n_signal) {
      for (std::size_t j = 0; j < spec.dim; ++j) {
        v[j] = static_cast<double>(class_direction[j]) +
               rng.next_gaussian() * spec.noise_sigma;
      }
    } else {
      for (std::size_t j = 0; j < spec.dim; ++j) v[j] = rng.next_gaussian();
    }
    const auto unit = to_unit_f32(v);
    std::copy(unit.begin(), unit.end(), bag.embeddings.row(i).begin());
  }

  // Row-major grid layout keeps the signal block contiguous in space.
  const std::int32_t grid_cols = static_cast<std::int32_t>(
      std::ceil(std::sqrt(static_cast<double>(spec.n_patches))));
  auto& coords = bag.coords.emplace();
  coords.resize(spec.n_patches);
  for (std::size_t i = 0; i < spec.n_patches; ++i) {
    coords[i].col = static_cast<std::int32_t>(i) % grid_cols;
    coords[i].row = static_cast<std::int32_t>(i) / grid_cols;
  }
  return bag;
}

PlantedDataset make_planted_dataset(std::span<const PlantedBagSpec> class_specs,
                                    std::size_t slides_per_class,
                                    std::uint64_t seed) {
  if (class_specs.size() < 2) {
    raise(ErrorCode::InvalidArgument, "planted dataset needs >= 2 classes");
  }
  if (slides_per_class < 1) {
    raise(ErrorCode::InvalidArgument, "need at least one slide per class");
  }
  const std::size_t dim = class_specs[0].dim;
  for (const auto& spec : class_specs) {
    spec.validate();
    if (spec.dim != dim) {
      raise(ErrorCode::DimensionMismatch,
            "all class specs must share one embedding dimension");
    }
  }

  PlantedDataset dataset;
  const std::size_t n_classes = class_specs.size();
  dataset.classifier.weights =
      random_orthonormal_rows(n_classes, dim, derive_seed(seed, 0));
  for (std::size_t c = 0; c < n_classes; ++c) {
    dataset.classifier.class_labels.push_back("class" + std::to_string(c));
    dataset.classifier.provenance.push_back(
        {{"planted direction " + std::to_string(c)}, {"CLASSNAME"}});
  }
  dataset.classifier.trial_seed = seed;

  for (std::size_t c = 0; c < n_classes; ++c) {
    for (std::size_t s = 0; s < slides_per_class; ++s) {
      PlantedBagSpec spec = class_specs[c];
      spec.class_index = c;
      spec.seed = derive_seed(seed, 1 + c * slides_per_class + s);
      SlideBag bag =
          make_planted_bag(spec, dataset.classifier.weights.row(c));
      bag.slide_id = slide_name(c, s);

      ManifestEntry entry;
      entry.slide_id = bag.slide_id;
      entry.path = "bags/" + bag.slide_id + ".mizb";
      entry.label = c;
      dataset.manifest.slides.push_back(std::move(entry));
      dataset.bags.push_back(std::move(bag));
    }
  }
  dataset.manifest.classes = dataset.classifier.class_labels;
  return dataset;
}

SyntheticPrompts make_synthetic_prompts(const ZeroShotClassifier& classifier,
                                        std::size_t templates_per_pool,
                                        std::size_t names_per_class,
                                        double text_noise,
                                        std::uint64_t seed) {
  if (templates_per_pool < 1 || names_per_class < 1) {
    raise(ErrorCode::InvalidArgument,
          "need at least one template and one classname per class");
  }
  SyntheticPrompts out;
  for (std::size_t t = 0; t < templates_per_pool; ++t) {
    out.pool.templates.push_back("synthetic prompt " + std::to_string(t) +
                                 " describing CLASSNAME.");
  }
  out.pool.class_labels = classifier.class_labels;

  const std::size_t dim = classifier.dim();
  out.table.dim = dim;
  SplitMix64 rng(seed);
  std::vector<double> v(dim);
  for (std::size_t c = 0; c < classifier.num_classes(); ++c) {
    std::vector<std::string> names;
    for (std::size_t n = 0; n < names_per_class; ++n) {
      names.push_back(classifier.class_labels[c] + " variant " +
                      std::to_string(n));
    }
    const auto w = classifier.weights.row(c);
    for (const auto& name : names) {
      for (const auto& tmpl : out.pool.templates) {
        for (std::size_t j = 0; j < dim; ++j) {
          v[j] = static_cast<double>(w[j]) + rng.next_gaussian() * text_noise;
        }
        out.table.entries.emplace(instantiate_template(tmpl, name),
                                  to_unit_f32(v));
      }
    }
    out.pool.classnames.push_back(std::move(names));
  }
  return out;
}

std::filesystem::path write_planted_dataset(const PlantedDataset& dataset,
                                            const SyntheticPrompts& prompts,
                                            const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "bags");
  for (const auto& bag : dataset.bags) {
    write_bag(bag, dir / "bags" / (bag.slide_id + ".mizb"));
  }
  write_classifier(dataset.classifier, dir / "classifier.json");
  write_pool(prompts.pool, dir / "pool.json");
  write_text_table(prompts.table, dir / "text_table.jsonl");
  const auto manifest_path = dir / "manifest.json";
  write_manifest(dataset.manifest, manifest_path);
  return manifest_path;
}

PairedLatentSet make_paired_latent(std::size_t m, std::size_t d_img,
                                   std::size_t d_txt, std::size_t d_latent,
                                   double noise, std::uint64_t seed) {
  if (m < 2) {
    raise(ErrorCode::InvalidArgument, "need at least two pairs");
  }
  if (d_latent > std::min(d_img, d_txt) || d_latent == 0) {
    raise(ErrorCode::InvalidArgument,
          "latent dimension must be in [1, min(D_img, D_txt)]");
  }

  PairedLatentSet out;
  SplitMix64 map_rng(derive_seed(seed, 0));
  const double scale = 1.0 / std::sqrt(static_cast<double>(d_latent));
  out.image_map = MatrixD(d_img, d_latent);
  for (double& x : out.image_map.storage()) {
    x = map_rng.next_gaussian() * scale;
  }
  out.text_map = MatrixD(d_txt, d_latent);
  for (double& x : out.text_map.storage()) {
    x = map_rng.next_gaussian() * scale;
  }

  out.pairs.image = MatrixF(m, d_img);
  out.pairs.text = MatrixF(m, d_txt);
  std::vector<double> z(d_latent);
  for (std::size_t i = 0; i < m; ++i) {
    SplitMix64 rng(derive_seed(seed, 1 + i));
    for (double& x : z) x = rng.next_gaussian();
    auto img = out.pairs.image.row(i);
    for (std::size_t r = 0; r < d_img; ++r) {
      double acc = 0.0;
      const double* map_row = out.image_map.row(r).data();
      for (std::size_t j = 0; j < d_latent; ++j) acc += map_row[j] * z[j];
      img[r] = static_cast<float>(acc + rng.next_gaussian() * noise);
    }
    auto txt = out.pairs.text.row(i);
    for (std::size_t r = 0; r < d_txt; ++r) {
      double acc = 0.0;
      const double* map_row = out.text_map.row(r).data();
      for (std::size_t j = 0; j < d_latent; ++j) acc += map_row[j] * z[j];
      txt[r] = static_cast<float>(acc + rng.next_gaussian() * noise);
    }
  }
  return out;
}

}  // namespace mizero
