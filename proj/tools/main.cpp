// Command-line front end for the zero-shot slide classification engine.
// Exit codes: 0 success, 2 argument error, 3 input-format error,
// 4 numerical failure. Progress goes to stderr; data goes to files.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mizero/align.hpp"
#include "mizero/bench.hpp"
#include "mizero/core.hpp"
#include "mizero/error.hpp"
#include "mizero/eval.hpp"
#include "mizero/hash.hpp"
#include "mizero/io.hpp"
#include "mizero/parallel.hpp"
#include "mizero/prompts.hpp"
#include "mizero/rng.hpp"
#include "mizero/synth.hpp"
#include "mizero/version.hpp"
#include "mizero/zeroshot.hpp"

#include <json.hpp>

namespace {

using mizero::Error;
using mizero::ErrorCode;
using ordered_json = nlohmann::ordered_json;

void banner(const std::string& subcommand,
            std::optional<std::uint64_t> seed,
            const std::vector<std::string>& input_paths) {
  std::cerr << "mizero " << mizero::kVersion << " " << subcommand;
  if (seed) std::cerr << " seed=" << *seed;
  for (const auto& p : input_paths) {
    // unreadable inputs are reported here and rejected by the loader with
    // a proper error class
    std::string digest = "<missing>";
    try {
      digest = mizero::hash_file(p);
    } catch (const Error&) {
    }
    std::cerr << " " << p << "=" << digest;
  }
  std::cerr << "\n";
}

mizero::PoolConfig make_pool_config(const std::string& method, std::size_t k,
                                    bool smooth, std::size_t knn) {
  mizero::PoolConfig cfg;
  if (method == "mean") {
    cfg.method = mizero::PoolMethod::Mean;
  } else if (method == "topk") {
    cfg.method = mizero::PoolMethod::TopK;
    cfg.k = k;
  } else {
    throw Error(ErrorCode::InvalidArgument,
                "--pool must be 'mean' or 'topk', got '" + method + "'");
  }
  if (smooth) cfg.smoothing = knn;
  cfg.validate();
  return cfg;
}

ordered_json pool_config_provenance(const mizero::PoolConfig& cfg) {
  ordered_json j;
  j["method"] = cfg.method == mizero::PoolMethod::Mean ? "mean" : "topk";
  if (cfg.method == mizero::PoolMethod::TopK) j["k"] = cfg.k;
  if (cfg.smoothing) {
    j["smoothing_knn"] = *cfg.smoothing;
  } else {
    j["smoothing_knn"] = nullptr;
  }
  return j;
}

// --- classify ---------------------------------------------------------------

struct ClassifyArgs {
  std::string manifest;
  std::string classifier;
  std::string pool_method = "topk";
  std::size_t k = 10;
  bool smooth = false;
  std::size_t knn = 8;
  std::string out;
};

int cmd_classify(const ClassifyArgs& args) {
  banner("classify", std::nullopt, {args.manifest, args.classifier});
  const auto cfg = make_pool_config(args.pool_method, args.k, args.smooth,
                                    args.knn);
  const auto data = mizero::load_dataset(args.manifest);
  const auto clf = mizero::read_classifier(args.classifier);

  ordered_json doc;
  doc["format"] = "mizero-predictions";
  doc["version"] = 1;
  doc["provenance"] = {
      {"manifest", args.manifest},
      {"manifest_hash", mizero::hash_file(args.manifest)},
      {"classifier", args.classifier},
      {"classifier_hash", mizero::hash_file(args.classifier)},
      {"pool_config", pool_config_provenance(cfg)},
      {"version", mizero::kVersion},
  };
  doc["classes"] = clf.class_labels;
  ordered_json preds = ordered_json::array();
  for (const auto& bag : data.bags) {
    const auto pred = mizero::classify_slide(bag, clf, cfg);
    ordered_json jp;
    jp["slide_id"] = pred.slide_id;
    jp["predicted_class"] = pred.predicted_class;
    jp["predicted_label"] = clf.class_labels[pred.predicted_class];
    jp["effective_k"] = pred.effective_k;
    jp["pooled_scores"] = pred.pooled_scores;
    preds.push_back(std::move(jp));
  }
  doc["predictions"] = std::move(preds);

  std::ofstream out(args.out, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error(ErrorCode::FileNotFound, "cannot create '" + args.out + "'");
  }
  out << doc.dump(2) << '\n';
  std::cerr << "wrote " << data.bags.size() << " predictions to " << args.out
            << "\n";
  return 0;
}

// --- evaluate ---------------------------------------------------------------

struct EvaluateArgs {
  std::string manifest;
  std::string pool_file;
  std::string text_table;
  std::size_t trials = 50;
  std::uint64_t seed = 0;
  std::string pool_method = "topk";
  std::size_t k = 10;
  bool k_sweep = false;
  bool smooth = false;
  std::size_t knn = 8;
  unsigned threads = 0;
  std::string report;
  std::string trial_csv;
};

int cmd_evaluate(const EvaluateArgs& args) {
  banner("evaluate", args.seed,
         {args.manifest, args.pool_file, args.text_table});
  const auto data = mizero::load_dataset(args.manifest);
  const auto pool = mizero::read_pool(args.pool_file);
  const auto table = mizero::read_text_table(args.text_table);
  const unsigned threads =
      args.threads == 0 ? mizero::default_thread_count() : args.threads;

  std::vector<std::size_t> ks;
  if (args.k_sweep && args.pool_method == "topk") {
    ks = {1, 5, 10, 50, 100};
  } else {
    ks = {args.k};
  }

  for (std::size_t k : ks) {
    const auto cfg =
        make_pool_config(args.pool_method, k, args.smooth, args.knn);
    auto report = mizero::run_evaluation(data, pool, table, args.trials,
                                         args.seed, cfg, threads);
    // thread count deliberately omitted so reports stay byte-identical
    report.provenance = {
        {"manifest", args.manifest},
        {"manifest_hash", mizero::hash_file(args.manifest)},
        {"pool_file", args.pool_file},
        {"pool_file_hash", mizero::hash_file(args.pool_file)},
        {"text_table", args.text_table},
        {"text_table_hash", mizero::hash_file(args.text_table)},
        {"version", mizero::kVersion},
    };
    std::filesystem::path report_path(args.report);
    if (ks.size() > 1) {
      report_path.replace_filename(report_path.stem().string() + ".k" +
                                   std::to_string(k) +
                                   report_path.extension().string());
    }
    mizero::write_report(report, report_path);
    if (!args.trial_csv.empty()) {
      std::filesystem::path csv_path(args.trial_csv);
      if (ks.size() > 1) {
        csv_path.replace_filename(csv_path.stem().string() + ".k" +
                                  std::to_string(k) +
                                  csv_path.extension().string());
      }
      mizero::write_trial_csv(report, csv_path);
    }
    std::cerr << "k=" << k << " median balanced accuracy "
              << report.accuracy.median << " (q1 " << report.accuracy.q1
              << ", q3 " << report.accuracy.q3 << ") -> "
              << report_path.string() << "\n";
  }
  return 0;
}

// --- build-classifier ---------------------------------------------------------

struct BuildClassifierArgs {
  std::string pool_file;
  std::string text_table;
  std::uint64_t trial_seed = 0;
  std::string out;
};

int cmd_build_classifier(const BuildClassifierArgs& args) {
  banner("build-classifier", args.trial_seed,
         {args.pool_file, args.text_table});
  const auto pool = mizero::read_pool(args.pool_file);
  const auto table = mizero::read_text_table(args.text_table);
  // The seed drives the trial stream directly, so a trial_seed taken from
  // an evaluation report rebuilds exactly that trial's classifier.
  const auto trial = mizero::sample_trial(pool, args.trial_seed);
  const auto clf = mizero::build_classifier(trial, pool, table);
  mizero::write_classifier(clf, args.out);
  std::cerr << "wrote classifier with " << clf.num_classes() << " classes to "
            << args.out << "\n";
  return 0;
}

// --- align --------------------------------------------------------------------

struct AlignArgs {
  std::string pairs;
  std::size_t dim_shared = 512;
  double temperature = 0.07;
  bool temp_as_multiplier = false;
  bool tau_trainable = false;
  bool no_bias = false;
  double lr = 1e-4;
  double weight_decay = 0.2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::size_t epochs = 10;
  std::size_t batch = 512;
  std::uint64_t seed = 0;
  std::string out;
  std::string trace;
};

int cmd_align(const AlignArgs& args) {
  banner("align", args.seed, {args.pairs});
  const auto pairs = mizero::read_paired(args.pairs);

  mizero::TrainConfig cfg;
  cfg.batch_size = args.batch;
  cfg.epochs = args.epochs;
  cfg.learning_rate = args.lr;
  cfg.beta1 = args.beta1;
  cfg.beta2 = args.beta2;
  cfg.weight_decay = args.weight_decay;
  cfg.seed = args.seed;
  // Temperatures quoted as 0.07 divide the cosine; the logit multiplier
  // is its reciprocal unless the literal reading is requested.
  cfg.tau_init =
      args.temp_as_multiplier ? args.temperature : 1.0 / args.temperature;
  cfg.tau_trainable = args.tau_trainable;
  cfg.use_bias = !args.no_bias;
  cfg.validate();

  auto model = mizero::AlignmentModel::init(
      pairs.image.cols(), pairs.text.cols(), args.dim_shared, cfg.tau_init,
      cfg.seed, cfg.use_bias, cfg.tau_trainable);
  auto result = mizero::train(std::move(model), pairs, cfg);

  const std::map<std::string, std::string> provenance = {
      {"pairs", args.pairs},
      {"pairs_hash", mizero::hash_file(args.pairs)},
      {"batch", std::to_string(cfg.batch_size)},
      {"epochs", std::to_string(cfg.epochs)},
      {"lr", std::to_string(cfg.learning_rate)},
      {"weight_decay", std::to_string(cfg.weight_decay)},
      {"seed", std::to_string(cfg.seed)},
      {"version", mizero::kVersion},
  };
  mizero::write_model(result.model, args.out, provenance);
  if (!args.trace.empty()) {
    mizero::write_loss_trace(result.loss_trace, args.trace);
  }
  std::cerr << "trained " << result.loss_trace.size() << " steps, loss "
            << result.loss_trace.front() << " -> " << result.loss_trace.back()
            << ", model -> " << args.out << "\n";
  return 0;
}

// --- score-map ------------------------------------------------------------------

struct ScoreMapArgs {
  std::string bag;
  std::string classifier;
  std::string out;
};

int cmd_score_map(const ScoreMapArgs& args) {
  banner("score-map", std::nullopt, {args.bag, args.classifier});
  const auto raw = mizero::read_bag(args.bag);
  if (!raw.coords) {
    throw Error(ErrorCode::MissingCoords,
                "bag '" + raw.slide_id + "' has no grid coordinates");
  }
  const auto bag = raw.normalized();
  const auto clf = mizero::read_classifier(args.classifier);
  const auto scores = mizero::score_bag(bag, clf);

  std::ofstream out(args.out, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error(ErrorCode::FileNotFound, "cannot create '" + args.out + "'");
  }
  mizero::write_score_map(scores, *bag.coords, out);
  std::cerr << "wrote score map for " << scores.patch_count() << " patches to "
            << args.out << "\n";
  return 0;
}

// --- bench ----------------------------------------------------------------------

struct BenchArgs {
  std::size_t n = 8767;
  std::size_t d = 512;
  std::size_t c = 3;
  std::size_t k = 10;
  std::size_t iters = 10;
  unsigned threads = 1;
  std::uint64_t seed = 0;
  std::string workdir;
};

int cmd_bench(const BenchArgs& args) {
  banner("bench", args.seed, {});
  mizero::BenchConfig cfg;
  cfg.n = args.n;
  cfg.d = args.d;
  cfg.c = args.c;
  cfg.k = args.k;
  cfg.iterations = args.iters;
  cfg.threads = args.threads;
  cfg.seed = args.seed;

  const std::filesystem::path workdir = args.workdir.empty()
      ? std::filesystem::temp_directory_path() / "mizero_bench"
      : std::filesystem::path(args.workdir);
  const auto result = mizero::run_scoring_benchmark(cfg, workdir);

  std::printf("bag: %zu patches x %zu dims, %zu classes, k=%zu, %llu bytes\n",
              cfg.n, cfg.d, cfg.c, cfg.k,
              static_cast<unsigned long long>(result.bag_bytes));
  std::printf("%-22s %10s %10s %10s\n", "phase", "mean ms", "min ms", "max ms");
  std::printf("%-22s %10.3f %10.3f %10.3f\n", "io (file read)",
              result.io.mean_ms, result.io.min_ms, result.io.max_ms);
  std::printf("%-22s %10.3f %10.3f %10.3f\n", "prep (normalize)",
              result.prep.mean_ms, result.prep.min_ms, result.prep.max_ms);
  std::printf("%-22s %10.3f %10.3f %10.3f\n", "compute (score+topk)",
              result.compute.mean_ms, result.compute.min_ms,
              result.compute.max_ms);
  std::printf("io/compute ratio: %.2f\n",
              result.io.mean_ms / result.compute.mean_ms);
  return 0;
}

// --- synth ----------------------------------------------------------------------

struct SynthDatasetArgs {
  std::string out_dir;
  std::size_t classes = 2;
  std::size_t slides_per_class = 100;
  std::size_t patches = 1000;
  std::size_t dim = 12;
  double signal_fraction = 0.05;
  double sigma = 0.3;
  std::size_t templates = 4;
  std::size_t names_per_class = 2;
  double text_noise = 0.05;
  std::uint64_t seed = 42;
};

int cmd_synth_dataset(const SynthDatasetArgs& args) {
  banner("synth dataset", args.seed, {});
  mizero::PlantedBagSpec proto;
  proto.n_patches = args.patches;
  proto.dim = args.dim;
  proto.signal_fraction = args.signal_fraction;
  proto.noise_sigma = args.sigma;
  std::vector<mizero::PlantedBagSpec> specs(args.classes, proto);

  const auto dataset =
      mizero::make_planted_dataset(specs, args.slides_per_class, args.seed);
  const auto prompts = mizero::make_synthetic_prompts(
      dataset.classifier, args.templates, args.names_per_class,
      args.text_noise, mizero::derive_seed(args.seed, 9000));
  const auto manifest_path =
      mizero::write_planted_dataset(dataset, prompts, args.out_dir);
  std::cerr << "wrote " << dataset.bags.size() << " bags under "
            << args.out_dir << " (manifest: " << manifest_path << ")\n";
  return 0;
}

struct SynthPairsArgs {
  std::string out;
  std::size_t m = 256;
  std::size_t d_img = 32;
  std::size_t d_txt = 24;
  std::size_t d_latent = 8;
  double noise = 0.1;
  std::uint64_t seed = 7;
};

int cmd_synth_pairs(const SynthPairsArgs& args) {
  banner("synth pairs", args.seed, {});
  const auto set = mizero::make_paired_latent(args.m, args.d_img, args.d_txt,
                                              args.d_latent, args.noise,
                                              args.seed);
  mizero::write_paired(set.pairs, args.out);
  std::cerr << "wrote " << set.pairs.pair_count() << " pairs to " << args.out
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Zero-shot multiple-instance classification of whole-slide "
               "images from patch embeddings"};
  app.require_subcommand(1);
  app.set_version_flag("--version", mizero::kVersion);

  ClassifyArgs classify_args;
  auto* classify = app.add_subcommand(
      "classify", "Classify every slide of a manifest with a classifier file");
  classify->add_option("--manifest", classify_args.manifest)->required();
  classify->add_option("--classifier", classify_args.classifier)->required();
  classify->add_option("--pool", classify_args.pool_method)
      ->check(CLI::IsMember({"mean", "topk"}));
  classify->add_option("--k", classify_args.k)->check(CLI::PositiveNumber);
  classify->add_flag("--smooth", classify_args.smooth);
  classify->add_option("--knn", classify_args.knn);
  classify->add_option("--out", classify_args.out)->required();

  EvaluateArgs eval_args;
  auto* evaluate = app.add_subcommand(
      "evaluate", "Prompt-sampled zero-shot evaluation over a manifest");
  evaluate->add_option("--manifest", eval_args.manifest)->required();
  evaluate->add_option("--pool-file", eval_args.pool_file)->required();
  evaluate->add_option("--text-table", eval_args.text_table)->required();
  evaluate->add_option("--trials", eval_args.trials)
      ->check(CLI::PositiveNumber);
  evaluate->add_option("--seed", eval_args.seed);
  evaluate->add_option("--pool", eval_args.pool_method)
      ->check(CLI::IsMember({"mean", "topk"}));
  evaluate->add_option("--k", eval_args.k)->check(CLI::PositiveNumber);
  evaluate->add_flag("--k-sweep", eval_args.k_sweep,
                     "Evaluate k in {1,5,10,50,100}");
  evaluate->add_flag("--smooth", eval_args.smooth);
  evaluate->add_option("--knn", eval_args.knn);
  evaluate->add_option("--threads", eval_args.threads);
  evaluate->add_option("--report", eval_args.report)->required();
  evaluate->add_option("--trial-csv", eval_args.trial_csv);

  BuildClassifierArgs build_args;
  auto* build = app.add_subcommand(
      "build-classifier", "Build a prompt-ensembled classifier file");
  build->add_option("--pool-file", build_args.pool_file)->required();
  build->add_option("--text-table", build_args.text_table)->required();
  build->add_option("--trial-seed", build_args.trial_seed);
  build->add_option("--out", build_args.out)->required();

  AlignArgs align_args;
  auto* align = app.add_subcommand(
      "align", "Train linear projection heads with the symmetric "
               "contrastive loss");
  align->add_option("--pairs", align_args.pairs)->required();
  align->add_option("--dim-shared", align_args.dim_shared)
      ->check(CLI::PositiveNumber);
  align->add_option("--temp", align_args.temperature)
      ->check(CLI::PositiveNumber);
  align->add_flag("--temp-as-multiplier", align_args.temp_as_multiplier,
                  "Treat --temp as the logit multiplier instead of a divisor");
  align->add_flag("--tau-trainable", align_args.tau_trainable);
  align->add_flag("--no-bias", align_args.no_bias);
  align->add_option("--lr", align_args.lr);
  align->add_option("--weight-decay", align_args.weight_decay);
  align->add_option("--beta1", align_args.beta1);
  align->add_option("--beta2", align_args.beta2);
  align->add_option("--epochs", align_args.epochs)->check(CLI::PositiveNumber);
  align->add_option("--batch", align_args.batch)->check(CLI::PositiveNumber);
  align->add_option("--seed", align_args.seed);
  align->add_option("--out", align_args.out)->required();
  align->add_option("--trace", align_args.trace);

  ScoreMapArgs map_args;
  auto* score_map = app.add_subcommand(
      "score-map", "Per-patch cosine score CSV for heatmaps");
  score_map->add_option("--bag", map_args.bag)->required();
  score_map->add_option("--classifier", map_args.classifier)->required();
  score_map->add_option("--out", map_args.out)->required();

  BenchArgs bench_args;
  auto* bench = app.add_subcommand(
      "bench", "Time bag loading vs score+pool compute");
  bench->add_option("--n", bench_args.n)->check(CLI::PositiveNumber);
  bench->add_option("--d", bench_args.d)->check(CLI::PositiveNumber);
  bench->add_option("--c", bench_args.c)->check(CLI::PositiveNumber);
  bench->add_option("--k", bench_args.k)->check(CLI::PositiveNumber);
  bench->add_option("--iters", bench_args.iters)->check(CLI::PositiveNumber);
  bench->add_option("--threads", bench_args.threads);
  bench->add_option("--seed", bench_args.seed);
  bench->add_option("--workdir", bench_args.workdir);

  auto* synth = app.add_subcommand("synth", "Deterministic fixture generation");
  synth->require_subcommand(1);

  SynthDatasetArgs sd_args;
  auto* synth_dataset = synth->add_subcommand(
      "dataset", "Planted-signal bags, manifest, classifier, prompt pool "
                 "and text table");
  synth_dataset->add_option("--out", sd_args.out_dir)->required();
  synth_dataset->add_option("--classes", sd_args.classes);
  synth_dataset->add_option("--slides-per-class", sd_args.slides_per_class);
  synth_dataset->add_option("--patches", sd_args.patches);
  synth_dataset->add_option("--dim", sd_args.dim);
  synth_dataset->add_option("--signal-fraction", sd_args.signal_fraction);
  synth_dataset->add_option("--sigma", sd_args.sigma);
  synth_dataset->add_option("--templates", sd_args.templates);
  synth_dataset->add_option("--names-per-class", sd_args.names_per_class);
  synth_dataset->add_option("--text-noise", sd_args.text_noise);
  synth_dataset->add_option("--seed", sd_args.seed);

  SynthPairsArgs sp_args;
  auto* synth_pairs = synth->add_subcommand(
      "pairs", "Planted-latent paired embeddings for the alignment trainer");
  synth_pairs->add_option("--out", sp_args.out)->required();
  synth_pairs->add_option("--m", sp_args.m);
  synth_pairs->add_option("--d-img", sp_args.d_img);
  synth_pairs->add_option("--d-txt", sp_args.d_txt);
  synth_pairs->add_option("--d-latent", sp_args.d_latent);
  synth_pairs->add_option("--noise", sp_args.noise);
  synth_pairs->add_option("--seed", sp_args.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: class=InvalidArgument message=\"" << e.what()
              << "\"\n";
    return 2;
  }

  try {
    if (*classify) return cmd_classify(classify_args);
    if (*evaluate) return cmd_evaluate(eval_args);
    if (*build) return cmd_build_classifier(build_args);
    if (*align) return cmd_align(align_args);
    if (*score_map) return cmd_score_map(map_args);
    if (*bench) return cmd_bench(bench_args);
    if (*synth_dataset) return cmd_synth_dataset(sd_args);
    if (*synth_pairs) return cmd_synth_pairs(sp_args);
  } catch (const Error& e) {
    std::cerr << "error: class=" << mizero::to_string(e.code())
              << " message=\"" << e.what() << "\"\n";
    return mizero::exit_class(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: class=Internal message=\"" << e.what() << "\"\n";
    return 1;
  }
  return 0;
}
