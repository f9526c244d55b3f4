#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mizero/io.hpp"
#include "mizero/matrix.hpp"

namespace mizero {

enum class Side { Image, Text };

/// Two trainable linear projection heads over frozen embeddings plus a
/// temperature parameter. The logit of a pair is tau * u.v with
/// tau = exp(log_tau); a configured temperature of 0.07 therefore enters
/// as the multiplier 1/0.07 under the default divisor convention.
struct AlignmentModel {
  MatrixD w_img;               // D_s x D_img
  std::vector<double> b_img;   // D_s
  MatrixD w_txt;               // D_s x D_txt
  std::vector<double> b_txt;   // D_s
  double log_tau = 0.0;
  bool tau_trainable = false;
  bool use_bias = true;

  double tau() const;
  std::size_t shared_dim() const noexcept { return w_img.rows(); }
  std::size_t image_dim() const noexcept { return w_img.cols(); }
  std::size_t text_dim() const noexcept { return w_txt.cols(); }

  void validate() const;

  /// Heads with N(0, 1/D_in) entries, zero biases, log_tau = ln(tau_init).
  static AlignmentModel init(std::size_t image_dim, std::size_t text_dim,
                             std::size_t shared_dim, double tau_init,
                             std::uint64_t seed, bool use_bias = true,
                             bool tau_trainable = false);
};

/// Projects a batch through one head and normalizes each row:
/// row m = normalize(W x_m + b). ZeroVector if a projection collapses.
MatrixD project(const AlignmentModel& model, Side side, const MatrixF& inputs);

/// Symmetric temperature-scaled contrastive loss over unit-row batches:
/// (sum of image-to-text and text-to-image cross-entropies) / (2M) with
/// logits tau * u_i.v_j. tau = 0 is permitted as a boundary value.
double contrastive_loss(const MatrixD& image_units, const MatrixD& text_units,
                        double tau);

struct AlignmentGradients {
  MatrixD w_img;
  std::vector<double> b_img;
  MatrixD w_txt;
  std::vector<double> b_txt;
  double log_tau = 0.0;
};

struct LossAndGradients {
  double loss = 0.0;
  AlignmentGradients grads;
};

/// Loss plus exact analytic gradients of all trainable parameters,
/// including the normalization Jacobian (I - u u^T)/||z|| and, when the
/// temperature is trainable, d loss / d log_tau.
LossAndGradients loss_gradients(const AlignmentModel& model,
                                const MatrixF& image_batch,
                                const MatrixF& text_batch);

struct TrainConfig {
  std::size_t batch_size = 512;
  std::size_t epochs = 10;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.2;
  std::uint64_t seed = 0;
  double tau_init = 1.0 / 0.07;
  bool tau_trainable = false;
  bool use_bias = true;

  void validate() const;
};

struct TrainResult {
  AlignmentModel model;
  std::vector<double> loss_trace;  // one entry per optimizer step
};

/// Adam with decoupled weight decay on the head matrices. Deterministic
/// given cfg.seed: epoch shuffles are Fisher-Yates over a SplitMix64
/// stream seeded with derive_seed(seed, epoch) and batches are the
/// consecutive full chunks of the shuffled order (remainder dropped).
/// A non-finite loss aborts with Divergence naming the step.
TrainResult train(AlignmentModel model, const PairedEmbeddingSet& data,
                  const TrainConfig& cfg);

/// Fraction of rows whose matching text is ranked first among all texts
/// (image-to-text retrieval top-1).
double retrieval_top1(const AlignmentModel& model, const MatrixF& image,
                      const MatrixF& text);

/// JSON model document; heads are stored in float precision. The optional
/// provenance map (training inputs, config) is embedded for rerunning.
AlignmentModel read_model(const std::filesystem::path& path);
void write_model(const AlignmentModel& model,
                 const std::filesystem::path& path,
                 const std::map<std::string, std::string>& provenance = {});

/// Delimited loss trace: "step,loss" per line.
void write_loss_trace(const std::vector<double>& trace,
                      const std::filesystem::path& path);

}  // namespace mizero
