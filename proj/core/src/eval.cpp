#include "mizero/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "mizero/error.hpp"
#include "mizero/parallel.hpp"
#include "mizero/rng.hpp"

namespace mizero {

using ordered_json = nlohmann::ordered_json;

namespace {

constexpr const char* kQuantileRule = "linear-interpolation at rank p*(n-1)";

void verify_self_consistency(const EvalReport& report) {
  if (report.trials.size() != report.n_trials) {
    raise(ErrorCode::BadFormat, "report trial count mismatch");
  }
  std::vector<double> acc;
  acc.reserve(report.trials.size());
  for (const auto& t : report.trials) {
    if (balanced_accuracy(t.confusion) != t.balanced_accuracy) {
      raise(ErrorCode::BadFormat,
            "trial balanced accuracy is not recomputable from its confusion");
    }
    acc.push_back(t.balanced_accuracy);
  }
  const SummaryStats stats = summarize(std::move(acc));
  if (stats.median != report.accuracy.median || stats.q1 != report.accuracy.q1 ||
      stats.q3 != report.accuracy.q3 || stats.min != report.accuracy.min ||
      stats.max != report.accuracy.max) {
    raise(ErrorCode::BadFormat,
          "report summary statistics do not match the per-trial list");
  }
}

}  // namespace

double balanced_accuracy(
    const std::vector<std::vector<std::uint64_t>>& confusion,
    const std::vector<std::string>* class_labels) {
  const std::size_t c = confusion.size();
  if (c == 0) {
    raise(ErrorCode::EmptyClass, "confusion matrix is empty");
  }
  double sum = 0.0;
  for (std::size_t truth = 0; truth < c; ++truth) {
    if (confusion[truth].size() != c) {
      raise(ErrorCode::SizeMismatch, "confusion matrix is not square");
    }
    std::uint64_t total = 0;
    for (std::uint64_t count : confusion[truth]) total += count;
    if (total == 0) {
      const std::string name = class_labels && truth < class_labels->size()
                                   ? (*class_labels)[truth]
                                   : std::to_string(truth);
      raise(ErrorCode::EmptyClass,
            "class '" + name + "' has no ground-truth samples");
    }
    sum += static_cast<double>(confusion[truth][truth]) /
           static_cast<double>(total);
  }
  return sum / static_cast<double>(c);
}

double quantile(std::span<const double> sorted_values, double p) {
  if (sorted_values.empty()) {
    raise(ErrorCode::InvalidArgument, "quantile of an empty set");
  }
  const double pos = p * static_cast<double>(sorted_values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = static_cast<std::size_t>(std::ceil(pos));
  if (lo == hi) return sorted_values[lo];
  const double frac = pos - static_cast<double>(lo);
  return sorted_values[lo] + frac * (sorted_values[hi] - sorted_values[lo]);
}

SummaryStats summarize(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  SummaryStats stats;
  stats.min = values.front();
  stats.max = values.back();
  stats.q1 = quantile(values, 0.25);
  stats.median = quantile(values, 0.5);
  stats.q3 = quantile(values, 0.75);
  return stats;
}

LoadedDataset load_dataset(const std::filesystem::path& manifest_path) {
  LoadedDataset data;
  data.manifest = read_manifest(manifest_path);
  data.bags.reserve(data.manifest.slides.size());
  for (const auto& entry : data.manifest.slides) {
    const auto path = resolve_manifest_path(manifest_path, entry);
    try {
      SlideBag bag = read_bag(path);
      bag.slide_id = entry.slide_id;
      bag.label = entry.label;
      bag.validate();
      data.bags.push_back(bag.normalized());
    } catch (const Error& e) {
      throw Error(e.code(), std::string(e.what()) + " (slide '" +
                                entry.slide_id + "')");
    }
  }
  return data;
}

TrialResult run_trial(const LoadedDataset& data, const PromptPool& pool,
                      const TextEmbeddingTable& table, const PromptTrial& trial,
                      const PoolConfig& cfg) {
  if (pool.class_labels != data.manifest.classes) {
    raise(ErrorCode::ClassMismatch,
          "prompt pool classes do not match the manifest classes");
  }
  TrialResult result;
  result.trial_seed = trial.trial_seed;
  result.trial = trial;

  const ZeroShotClassifier clf = build_classifier(trial, pool, table);
  const std::size_t c = clf.num_classes();
  result.confusion.assign(c, std::vector<std::uint64_t>(c, 0));
  result.predictions.reserve(data.bags.size());

  for (const auto& bag : data.bags) {
    if (!bag.label) {
      raise(ErrorCode::InvalidLabel,
            "slide '" + bag.slide_id + "' has no ground-truth label");
    }
    try {
      SlidePrediction pred = classify_slide(bag, clf, cfg);
      result.confusion[*bag.label][pred.predicted_class] += 1;
      result.predictions.push_back(std::move(pred));
    } catch (const Error& e) {
      throw Error(e.code(),
                  std::string(e.what()) + " (slide '" + bag.slide_id + "')");
    }
  }
  result.balanced_accuracy =
      balanced_accuracy(result.confusion, &data.manifest.classes);
  return result;
}

EvalReport run_evaluation(const LoadedDataset& data, const PromptPool& pool,
                          const TextEmbeddingTable& table,
                          std::size_t n_trials, std::uint64_t master_seed,
                          const PoolConfig& cfg, unsigned threads) {
  cfg.validate();
  const auto trials = sample_trials(pool, n_trials, master_seed);

  EvalReport report;
  report.n_trials = n_trials;
  report.master_seed = master_seed;
  report.pool_config = cfg;
  report.pool_hash = pool_hash(pool);
  report.prng_id = kPrngId;
  report.quantile_rule = kQuantileRule;
  report.trials.resize(n_trials);

  parallel_for(n_trials, threads, [&](std::size_t t) {
    report.trials[t] = run_trial(data, pool, table, trials[t], cfg);
  });

  std::vector<double> acc;
  acc.reserve(n_trials);
  for (const auto& t : report.trials) acc.push_back(t.balanced_accuracy);
  report.accuracy = summarize(std::move(acc));
  return report;
}

// --- report serialization -----------------------------------------------------

namespace {

ordered_json pool_config_json(const PoolConfig& cfg) {
  ordered_json j;
  j["method"] = cfg.method == PoolMethod::Mean ? "mean" : "topk";
  if (cfg.method == PoolMethod::TopK) j["k"] = cfg.k;
  if (cfg.smoothing) {
    j["smoothing_knn"] = *cfg.smoothing;
  } else {
    j["smoothing_knn"] = nullptr;
  }
  return j;
}

PoolConfig pool_config_from_json(const ordered_json& j) {
  PoolConfig cfg;
  const std::string method = j.value("method", "");
  if (method == "mean") {
    cfg.method = PoolMethod::Mean;
  } else if (method == "topk") {
    cfg.method = PoolMethod::TopK;
    cfg.k = j.value("k", std::size_t{1});
  } else {
    raise(ErrorCode::BadFormat, "unknown pooling method '" + method + "'");
  }
  if (j.contains("smoothing_knn") && !j["smoothing_knn"].is_null()) {
    cfg.smoothing = j["smoothing_knn"].get<std::size_t>();
  }
  return cfg;
}

double checked_accuracy(const ordered_json& v) {
  const double x = v.get<double>();
  if (!std::isfinite(x)) raise(ErrorCode::NonFinite, "non-finite accuracy");
  return x;
}

}  // namespace

void write_report(const EvalReport& report, const std::filesystem::path& path) {
  verify_self_consistency(report);
  ordered_json doc;
  doc["format"] = "mizero-eval-report";
  doc["version"] = 1;
  doc["n_trials"] = report.n_trials;
  doc["master_seed"] = report.master_seed;
  doc["prng"] = report.prng_id;
  doc["quantile_rule"] = report.quantile_rule;
  doc["pool_hash"] = report.pool_hash;
  doc["pool_config"] = pool_config_json(report.pool_config);
  ordered_json prov = ordered_json::object();
  for (const auto& [key, value] : report.provenance) prov[key] = value;
  doc["provenance"] = std::move(prov);
  ordered_json stats;
  stats["median"] = report.accuracy.median;
  stats["q1"] = report.accuracy.q1;
  stats["q3"] = report.accuracy.q3;
  stats["min"] = report.accuracy.min;
  stats["max"] = report.accuracy.max;
  doc["balanced_accuracy"] = std::move(stats);

  ordered_json trials = ordered_json::array();
  for (const auto& t : report.trials) {
    ordered_json jt;
    jt["trial_seed"] = t.trial_seed;
    jt["balanced_accuracy"] = t.balanced_accuracy;
    jt["templates"] = t.trial.templates;
    jt["classnames"] = t.trial.classnames;
    jt["confusion"] = t.confusion;
    ordered_json preds = ordered_json::array();
    for (const auto& p : t.predictions) {
      ordered_json jp;
      jp["slide_id"] = p.slide_id;
      jp["predicted_class"] = p.predicted_class;
      jp["effective_k"] = p.effective_k;
      jp["pooled_scores"] = p.pooled_scores;
      preds.push_back(std::move(jp));
    }
    jt["predictions"] = std::move(preds);
    trials.push_back(std::move(jt));
  }
  doc["trials"] = std::move(trials);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    raise(ErrorCode::FileNotFound, "cannot create '" + path.string() + "'");
  }
  out << doc.dump(2) << '\n';
}

EvalReport read_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    raise(ErrorCode::FileNotFound, "cannot open '" + path.string() + "'");
  }
  ordered_json doc = ordered_json::parse(in, nullptr, false);
  if (doc.is_discarded() || !doc.is_object() ||
      doc.value("format", "") != "mizero-eval-report") {
    raise(ErrorCode::BadMagic,
          "'" + path.string() + "' is not an evaluation report");
  }
  if (doc.value("version", 0) != 1) {
    raise(ErrorCode::UnsupportedVersion,
          "'" + path.string() + "' has an unsupported report version");
  }

  EvalReport report;
  report.n_trials = doc["n_trials"].get<std::size_t>();
  report.master_seed = doc["master_seed"].get<std::uint64_t>();
  report.prng_id = doc.value("prng", "");
  report.quantile_rule = doc.value("quantile_rule", "");
  report.pool_hash = doc.value("pool_hash", "");
  report.pool_config = pool_config_from_json(doc["pool_config"]);
  if (doc.contains("provenance")) {
    for (const auto& [key, value] : doc["provenance"].items()) {
      report.provenance[key] = value.get<std::string>();
    }
  }
  const auto& stats = doc["balanced_accuracy"];
  report.accuracy.median = checked_accuracy(stats["median"]);
  report.accuracy.q1 = checked_accuracy(stats["q1"]);
  report.accuracy.q3 = checked_accuracy(stats["q3"]);
  report.accuracy.min = checked_accuracy(stats["min"]);
  report.accuracy.max = checked_accuracy(stats["max"]);

  for (const auto& jt : doc["trials"]) {
    TrialResult t;
    t.trial_seed = jt["trial_seed"].get<std::uint64_t>();
    t.trial.trial_seed = t.trial_seed;
    t.balanced_accuracy = checked_accuracy(jt["balanced_accuracy"]);
    t.trial.templates = jt["templates"].get<std::vector<std::string>>();
    t.trial.classnames =
        jt["classnames"].get<std::vector<std::vector<std::string>>>();
    t.confusion =
        jt["confusion"].get<std::vector<std::vector<std::uint64_t>>>();
    for (const auto& jp : jt["predictions"]) {
      SlidePrediction p;
      p.slide_id = jp["slide_id"].get<std::string>();
      p.predicted_class = jp["predicted_class"].get<std::size_t>();
      p.effective_k = jp["effective_k"].get<std::size_t>();
      p.pooled_scores = jp["pooled_scores"].get<std::vector<double>>();
      t.predictions.push_back(std::move(p));
    }
    report.trials.push_back(std::move(t));
  }
  verify_self_consistency(report);
  return report;
}

void write_trial_csv(const EvalReport& report,
                     const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    raise(ErrorCode::FileNotFound, "cannot create '" + path.string() + "'");
  }
  out << "trial,trial_seed,balanced_accuracy\n";
  char buf[64];
  for (std::size_t i = 0; i < report.trials.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g",
                  report.trials[i].balanced_accuracy);
    out << i << ',' << report.trials[i].trial_seed << ',' << buf << '\n';
  }
}

}  // namespace mizero
