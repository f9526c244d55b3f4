#include "mizero/prompts.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "mizero/error.hpp"
#include "mizero/hash.hpp"
#include "mizero/rng.hpp"

namespace mizero {

using ordered_json = nlohmann::ordered_json;

namespace {

std::size_t placeholder_count(const std::string& text) {
  std::size_t count = 0;
  std::size_t pos = 0;
  const std::string token = kClassnamePlaceholder;
  while ((pos = text.find(token, pos)) != std::string::npos) {
    ++count;
    pos += token.size();
  }
  return count;
}

/// First `count` entries of a Fisher-Yates pass over [0, n).
std::vector<std::size_t> draw_without_replacement(SplitMix64& rng,
                                                  std::size_t n,
                                                  std::size_t count) {
  std::vector<std::size_t> indices(n);
  std::iota(indices.begin(), indices.end(), std::size_t{0});
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.next_below(n - i));
    std::swap(indices[i], indices[j]);
  }
  indices.resize(count);
  return indices;
}

}  // namespace

void PromptPool::validate() const {
  if (templates.empty()) {
    raise(ErrorCode::EmptyPool, "prompt pool has no templates");
  }
  if (class_labels.empty()) {
    raise(ErrorCode::EmptyPool, "prompt pool has no classes");
  }
  if (classnames.size() != class_labels.size()) {
    raise(ErrorCode::SizeMismatch,
          "prompt pool has " + std::to_string(classnames.size()) +
              " classname lists for " + std::to_string(class_labels.size()) +
              " classes");
  }
  for (const auto& t : templates) {
    if (placeholder_count(t) != 1) {
      raise(ErrorCode::BadFormat,
            "template '" + t + "' must contain '" +
                std::string(kClassnamePlaceholder) + "' exactly once");
    }
  }
  for (std::size_t c = 0; c < classnames.size(); ++c) {
    if (classnames[c].empty()) {
      raise(ErrorCode::EmptyPool,
            "class '" + class_labels[c] + "' has no classnames");
    }
  }
}

PromptTrial sample_trial(const PromptPool& pool, std::uint64_t trial_seed,
                         const SamplingOptions& options) {
  pool.validate();
  PromptTrial trial;
  trial.trial_seed = trial_seed;
  SplitMix64 rng(trial_seed);

  const std::size_t n_templates = pool.templates.size();
  const std::size_t count =
      1 + static_cast<std::size_t>(rng.next_below(n_templates));
  for (std::size_t idx : draw_without_replacement(rng, n_templates, count)) {
    trial.templates.push_back(pool.templates[idx]);
  }

  trial.classnames.resize(pool.num_classes());
  for (std::size_t c = 0; c < pool.num_classes(); ++c) {
    const auto& names = pool.classnames[c];
    if (options.classname_subsets) {
      const std::size_t n_names =
          1 + static_cast<std::size_t>(rng.next_below(names.size()));
      for (std::size_t idx :
           draw_without_replacement(rng, names.size(), n_names)) {
        trial.classnames[c].push_back(names[idx]);
      }
    } else {
      trial.classnames[c].push_back(
          names[static_cast<std::size_t>(rng.next_below(names.size()))]);
    }
  }
  return trial;
}

std::vector<PromptTrial> sample_trials(const PromptPool& pool,
                                       std::size_t n_trials,
                                       std::uint64_t master_seed,
                                       const SamplingOptions& options) {
  pool.validate();
  if (n_trials < 1) {
    raise(ErrorCode::InvalidArgument, "n_trials must be >= 1");
  }
  std::vector<PromptTrial> trials;
  trials.reserve(n_trials);
  for (std::size_t t = 0; t < n_trials; ++t) {
    trials.push_back(sample_trial(pool, derive_seed(master_seed, t), options));
  }
  return trials;
}

std::string instantiate_template(const std::string& template_text,
                                 const std::string& classname) {
  const std::size_t pos = template_text.find(kClassnamePlaceholder);
  if (pos == std::string::npos) {
    raise(ErrorCode::BadFormat,
          "template '" + template_text + "' has no placeholder");
  }
  std::string out = template_text;
  out.replace(pos, std::string(kClassnamePlaceholder).size(), classname);
  return out;
}

std::vector<float> ensemble_class(std::span<const std::string> texts,
                                  const TextEmbeddingTable& table) {
  if (texts.empty()) {
    raise(ErrorCode::EmptyPool, "cannot ensemble zero prompts");
  }
  std::vector<double> mean;
  for (const auto& text : texts) {
    const std::vector<float>* vec = table.find(text);
    if (!vec) {
      raise(ErrorCode::MissingText,
            "text table has no embedding for '" + text + "'");
    }
    const auto unit = normalize(std::span<const float>(*vec));
    if (mean.empty()) mean.assign(unit.size(), 0.0);
    for (std::size_t j = 0; j < unit.size(); ++j) mean[j] += unit[j];
  }
  for (double& x : mean) x /= static_cast<double>(texts.size());
  const auto unit_mean = normalize(std::span<const double>(mean));
  std::vector<float> out(unit_mean.size());
  for (std::size_t j = 0; j < out.size(); ++j) {
    out[j] = static_cast<float>(unit_mean[j]);
  }
  return out;
}

ZeroShotClassifier build_classifier(const PromptTrial& trial,
                                    const PromptPool& pool,
                                    const TextEmbeddingTable& table) {
  pool.validate();
  if (trial.templates.empty() || trial.classnames.size() != pool.num_classes()) {
    raise(ErrorCode::EmptyPool, "trial does not match the prompt pool");
  }

  ZeroShotClassifier clf;
  clf.class_labels = pool.class_labels;
  clf.trial_seed = trial.trial_seed;

  std::vector<std::vector<float>> rows;
  rows.reserve(pool.num_classes());
  for (std::size_t c = 0; c < pool.num_classes(); ++c) {
    std::vector<std::string> prompts;
    prompts.reserve(trial.templates.size() * trial.classnames[c].size());
    for (const auto& name : trial.classnames[c]) {
      for (const auto& t : trial.templates) {
        prompts.push_back(instantiate_template(t, name));
      }
    }
    rows.push_back(ensemble_class(prompts, table));

    ClassProvenance p;
    p.classnames = trial.classnames[c];
    p.templates = trial.templates;
    clf.provenance.push_back(std::move(p));
  }

  clf.weights = MatrixF(rows.size(), rows.front().size());
  for (std::size_t c = 0; c < rows.size(); ++c) {
    if (rows[c].size() != rows.front().size()) {
      raise(ErrorCode::RaggedDimensions,
            "class embeddings have inconsistent dimensions");
    }
    std::copy(rows[c].begin(), rows[c].end(), clf.weights.row(c).begin());
  }
  return clf;
}

PromptPool read_pool(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    raise(ErrorCode::FileNotFound, "cannot open '" + path.string() + "'");
  }
  ordered_json doc = ordered_json::parse(in, nullptr, false);
  if (doc.is_discarded() || !doc.is_object() || !doc.contains("templates") ||
      !doc.contains("classnames") || !doc["classnames"].is_object()) {
    raise(ErrorCode::BadFormat,
          "'" + path.string() + "' is not a prompt pool document");
  }
  PromptPool pool;
  for (const auto& t : doc["templates"]) {
    pool.templates.push_back(t.get<std::string>());
  }
  for (const auto& [label, names] : doc["classnames"].items()) {
    pool.class_labels.push_back(label);
    std::vector<std::string> list;
    for (const auto& name : names) list.push_back(name.get<std::string>());
    pool.classnames.push_back(std::move(list));
  }
  pool.validate();
  return pool;
}

void write_pool(const PromptPool& pool, const std::filesystem::path& path) {
  pool.validate();
  ordered_json doc;
  doc["templates"] = pool.templates;
  ordered_json names = ordered_json::object();
  for (std::size_t c = 0; c < pool.num_classes(); ++c) {
    names[pool.class_labels[c]] = pool.classnames[c];
  }
  doc["classnames"] = std::move(names);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    raise(ErrorCode::FileNotFound, "cannot create '" + path.string() + "'");
  }
  out << doc.dump(2) << '\n';
}

std::string pool_hash(const PromptPool& pool) {
  // Hash a canonical serialization so equal pools hash equally regardless
  // of the file they came from.
  std::string canon;
  for (const auto& t : pool.templates) {
    canon += t;
    canon += '\x1f';
  }
  canon += '\x1e';
  for (std::size_t c = 0; c < pool.num_classes(); ++c) {
    canon += pool.class_labels[c];
    canon += '\x1f';
    for (const auto& name : pool.classnames[c]) {
      canon += name;
      canon += '\x1f';
    }
    canon += '\x1e';
  }
  return "fnv1a64:" + hex64(fnv1a64(canon));
}

const std::vector<std::string>& default_templates() {
  static const std::vector<std::string> templates = {
      "CLASSNAME.",
      "a photomicrograph showing CLASSNAME.",
      "a photomicrograph of CLASSNAME.",
      "an image of CLASSNAME.",
      "an image showing CLASSNAME.",
      "an example of CLASSNAME.",
      "CLASSNAME is shown.",
      "this is CLASSNAME.",
      "there is CLASSNAME.",
      "a histopathological image showing CLASSNAME.",
      "a histopathological image of CLASSNAME.",
      "a histopathological photograph of CLASSNAME.",
      "a histopathological photograph showing CLASSNAME.",
      "shows CLASSNAME.",
      "presence of CLASSNAME.",
      "CLASSNAME is present.",
  };
  return templates;
}

}  // namespace mizero
