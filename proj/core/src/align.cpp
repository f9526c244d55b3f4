#include "mizero/align.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "mizero/core.hpp"
#include "mizero/error.hpp"
#include "mizero/rng.hpp"

namespace mizero {

using ordered_json = nlohmann::ordered_json;

namespace {

constexpr double kCollapseThreshold = 1e-12;

void check_finite(const std::vector<double>& v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      raise(ErrorCode::NonFinite, std::string(what) + " has a non-finite value");
    }
  }
}

/// Z = X W^T + 1 b^T, X in float, result double. W is D_out x D_in.
MatrixD affine(const MatrixF& x, const MatrixD& w,
               const std::vector<double>& b) {
  const std::size_t m = x.rows();
  const std::size_t d_in = x.cols();
  const std::size_t d_out = w.rows();
  if (w.cols() != d_in) {
    raise(ErrorCode::DimensionMismatch,
          "head expects inputs of dimension " + std::to_string(w.cols()) +
              ", got " + std::to_string(d_in));
  }
  MatrixD z(m, d_out);
  for (std::size_t i = 0; i < m; ++i) {
    const float* xi = x.row(i).data();
    for (std::size_t o = 0; o < d_out; ++o) {
      const double* wo = w.row(o).data();
      double acc = b.empty() ? 0.0 : b[o];
      for (std::size_t j = 0; j < d_in; ++j) {
        acc += wo[j] * static_cast<double>(xi[j]);
      }
      z(i, o) = acc;
    }
  }
  return z;
}

struct NormalizedBatch {
  MatrixD units;               // rows u_m = z_m / ||z_m||
  std::vector<double> norms;   // ||z_m||
};

NormalizedBatch normalize_rows(MatrixD z) {
  NormalizedBatch out;
  out.norms.resize(z.rows());
  for (std::size_t i = 0; i < z.rows(); ++i) {
    auto row = z.row(i);
    const double norm = l2_norm(std::span<const double>(row.data(), row.size()));
    if (!(norm >= kCollapseThreshold)) {
      raise(ErrorCode::ZeroVector,
            "projection collapsed to norm " + std::to_string(norm) +
                " at row " + std::to_string(i));
    }
    out.norms[i] = norm;
    for (double& x : row) x /= norm;
  }
  out.units = std::move(z);
  return out;
}

/// Softmax losses and probability matrices for the two directions.
/// logits(i, j) = tau * u_i . v_j. Returns the summed (not averaged)
/// cross-entropies and writes row/column softmax into p_row / p_col.
struct DirectionalTerms {
  double image_to_text = 0.0;
  double text_to_image = 0.0;
  MatrixD p_row;  // softmax over j for each row i
  MatrixD p_col;  // softmax over i for each column j
  MatrixD cosines;
};

DirectionalTerms directional_terms(const MatrixD& u, const MatrixD& v,
                                   double tau) {
  const std::size_t m = u.rows();
  DirectionalTerms t;
  t.cosines = MatrixD(m, m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const double* ui = u.row(i).data();
      const double* vj = v.row(j).data();
      double dot = 0.0;
      for (std::size_t d = 0; d < u.cols(); ++d) dot += ui[d] * vj[d];
      t.cosines(i, j) = dot;
    }
  }

  t.p_row = MatrixD(m, m);
  t.p_col = MatrixD(m, m);

  // Rows: image i against all texts.
  for (std::size_t i = 0; i < m; ++i) {
    double max_logit = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j) {
      max_logit = std::max(max_logit, tau * t.cosines(i, j));
    }
    double denom = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const double e = std::exp(tau * t.cosines(i, j) - max_logit);
      t.p_row(i, j) = e;
      denom += e;
    }
    for (std::size_t j = 0; j < m; ++j) t.p_row(i, j) /= denom;
    t.image_to_text += std::log(denom) + max_logit - tau * t.cosines(i, i);
  }

  // Columns: text j against all images.
  for (std::size_t j = 0; j < m; ++j) {
    double max_logit = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < m; ++i) {
      max_logit = std::max(max_logit, tau * t.cosines(i, j));
    }
    double denom = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double e = std::exp(tau * t.cosines(i, j) - max_logit);
      t.p_col(i, j) = e;
      denom += e;
    }
    for (std::size_t i = 0; i < m; ++i) t.p_col(i, j) /= denom;
    t.text_to_image += std::log(denom) + max_logit - tau * t.cosines(j, j);
  }
  return t;
}

}  // namespace

double AlignmentModel::tau() const { return std::exp(log_tau); }

void AlignmentModel::validate() const {
  if (w_img.rows() == 0 || w_txt.rows() == 0 ||
      w_img.rows() != w_txt.rows()) {
    raise(ErrorCode::DimensionMismatch,
          "heads must project into a common non-empty space");
  }
  if (use_bias &&
      (b_img.size() != shared_dim() || b_txt.size() != shared_dim())) {
    raise(ErrorCode::SizeMismatch, "bias size does not match the shared dim");
  }
  for (double x : w_img.storage()) {
    if (!std::isfinite(x)) raise(ErrorCode::NonFinite, "image head non-finite");
  }
  for (double x : w_txt.storage()) {
    if (!std::isfinite(x)) raise(ErrorCode::NonFinite, "text head non-finite");
  }
  check_finite(b_img, "image bias");
  check_finite(b_txt, "text bias");
  if (!std::isfinite(log_tau)) {
    raise(ErrorCode::NonFinite, "log_tau is non-finite");
  }
}

AlignmentModel AlignmentModel::init(std::size_t image_dim,
                                    std::size_t text_dim,
                                    std::size_t shared_dim, double tau_init,
                                    std::uint64_t seed, bool use_bias,
                                    bool tau_trainable) {
  if (image_dim == 0 || text_dim == 0 || shared_dim == 0) {
    raise(ErrorCode::InvalidArgument, "head dimensions must be positive");
  }
  if (!(tau_init > 0.0)) {
    raise(ErrorCode::InvalidArgument, "tau_init must be positive");
  }
  AlignmentModel model;
  model.w_img = MatrixD(shared_dim, image_dim);
  model.w_txt = MatrixD(shared_dim, text_dim);
  model.b_img.assign(use_bias ? shared_dim : 0, 0.0);
  model.b_txt.assign(use_bias ? shared_dim : 0, 0.0);
  model.log_tau = std::log(tau_init);
  model.tau_trainable = tau_trainable;
  model.use_bias = use_bias;

  SplitMix64 img_rng(derive_seed(seed, 0));
  const double img_scale = 1.0 / std::sqrt(static_cast<double>(image_dim));
  for (double& x : model.w_img.storage()) {
    x = img_rng.next_gaussian() * img_scale;
  }
  SplitMix64 txt_rng(derive_seed(seed, 1));
  const double txt_scale = 1.0 / std::sqrt(static_cast<double>(text_dim));
  for (double& x : model.w_txt.storage()) {
    x = txt_rng.next_gaussian() * txt_scale;
  }
  return model;
}

MatrixD project(const AlignmentModel& model, Side side, const MatrixF& inputs) {
  const MatrixD& w = (side == Side::Image) ? model.w_img : model.w_txt;
  const std::vector<double>& b = (side == Side::Image) ? model.b_img : model.b_txt;
  return normalize_rows(affine(inputs, w, b)).units;
}

double contrastive_loss(const MatrixD& image_units, const MatrixD& text_units,
                        double tau) {
  if (image_units.rows() != text_units.rows() ||
      image_units.cols() != text_units.cols()) {
    raise(ErrorCode::ShapeMismatch,
          "contrastive loss needs batches of identical shape");
  }
  if (image_units.rows() == 0) {
    raise(ErrorCode::ShapeMismatch, "contrastive loss needs a non-empty batch");
  }
  if (!(tau >= 0.0)) {
    raise(ErrorCode::InvalidArgument, "tau must be non-negative");
  }
  const auto terms = directional_terms(image_units, text_units, tau);
  const double m = static_cast<double>(image_units.rows());
  return (terms.image_to_text + terms.text_to_image) / (2.0 * m);
}

LossAndGradients loss_gradients(const AlignmentModel& model,
                                const MatrixF& image_batch,
                                const MatrixF& text_batch) {
  if (image_batch.rows() != text_batch.rows()) {
    raise(ErrorCode::ShapeMismatch, "image/text batches must pair by row");
  }
  const std::size_t m = image_batch.rows();
  if (m < 1) {
    raise(ErrorCode::ShapeMismatch, "empty batch");
  }
  const std::size_t ds = model.shared_dim();
  const double tau = model.tau();

  const auto img = normalize_rows(affine(image_batch, model.w_img, model.b_img));
  const auto txt = normalize_rows(affine(text_batch, model.w_txt, model.b_txt));
  const auto terms = directional_terms(img.units, txt.units, tau);

  LossAndGradients out;
  out.loss = (terms.image_to_text + terms.text_to_image) /
             (2.0 * static_cast<double>(m));

  // d loss / d logit(i,j) = (p_row + p_col - 2I) / (2M); the tau factor
  // from logit = tau * cosine is applied when chaining into u and v.
  MatrixD g(m, m);
  const double inv2m = 1.0 / (2.0 * static_cast<double>(m));
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const double delta = (i == j) ? 2.0 : 0.0;
      g(i, j) = (terms.p_row(i, j) + terms.p_col(i, j) - delta) * inv2m;
    }
  }

  double d_tau = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      d_tau += g(i, j) * terms.cosines(i, j);
    }
  }

  // dU = tau * G V, dV = tau * G^T U.
  MatrixD du(m, ds);
  MatrixD dv(m, ds);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t d = 0; d < ds; ++d) {
      double acc_u = 0.0;
      double acc_v = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        acc_u += g(i, j) * txt.units(j, d);
        acc_v += g(j, i) * img.units(j, d);
      }
      du(i, d) = tau * acc_u;
      dv(i, d) = tau * acc_v;
    }
  }

  // Through the normalization: dz = (du - (du.u) u) / ||z||.
  auto backprop_norm = [](MatrixD& dunit, const NormalizedBatch& batch) {
    for (std::size_t i = 0; i < dunit.rows(); ++i) {
      auto drow = dunit.row(i);
      const auto urow = batch.units.row(i);
      double dot = 0.0;
      for (std::size_t d = 0; d < drow.size(); ++d) dot += drow[d] * urow[d];
      const double inv_norm = 1.0 / batch.norms[i];
      for (std::size_t d = 0; d < drow.size(); ++d) {
        drow[d] = (drow[d] - dot * urow[d]) * inv_norm;
      }
    }
  };
  backprop_norm(du, img);
  backprop_norm(dv, txt);

  // Linear head: dW = dZ^T X, db = column sums of dZ.
  auto head_grads = [](const MatrixD& dz, const MatrixF& x, bool use_bias,
                       MatrixD& dw, std::vector<double>& db) {
    const std::size_t d_out = dz.cols();
    const std::size_t d_in = x.cols();
    dw = MatrixD(d_out, d_in);
    db.assign(use_bias ? d_out : 0, 0.0);
    for (std::size_t i = 0; i < dz.rows(); ++i) {
      const double* dzi = dz.row(i).data();
      const float* xi = x.row(i).data();
      for (std::size_t o = 0; o < d_out; ++o) {
        double* dwo = dw.row(o).data();
        const double s = dzi[o];
        for (std::size_t j = 0; j < d_in; ++j) {
          dwo[j] += s * static_cast<double>(xi[j]);
        }
        if (use_bias) db[o] += s;
      }
    }
  };
  head_grads(du, image_batch, model.use_bias, out.grads.w_img, out.grads.b_img);
  head_grads(dv, text_batch, model.use_bias, out.grads.w_txt, out.grads.b_txt);
  out.grads.log_tau = model.tau_trainable ? tau * d_tau : 0.0;
  return out;
}

void TrainConfig::validate() const {
  if (batch_size < 2) {
    raise(ErrorCode::InvalidArgument, "batch size must be >= 2");
  }
  if (!(learning_rate > 0.0) && learning_rate != 0.0) {
    raise(ErrorCode::InvalidArgument, "learning rate must be >= 0");
  }
  if (!(tau_init > 0.0)) {
    raise(ErrorCode::InvalidArgument, "tau_init must be positive");
  }
  if (epochs < 1) {
    raise(ErrorCode::InvalidArgument, "epochs must be >= 1");
  }
}

namespace {

/// Adam moments for one parameter block.
struct AdamState {
  std::vector<double> m;
  std::vector<double> v;

  explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};

void adam_update(std::span<double> params, std::span<const double> grads,
                 AdamState& state, const TrainConfig& cfg, double decay,
                 double bias1, double bias2) {
  constexpr double eps = 1e-8;
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grads[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
    const double m_hat = state.m[i] / bias1;
    const double v_hat = state.v[i] / bias2;
    params[i] -= cfg.learning_rate *
                 (m_hat / (std::sqrt(v_hat) + eps) + decay * params[i]);
  }
}

}  // namespace

TrainResult train(AlignmentModel model, const PairedEmbeddingSet& data,
                  const TrainConfig& cfg) {
  cfg.validate();
  data.validate();
  model.validate();
  if (data.pair_count() < cfg.batch_size) {
    raise(ErrorCode::InvalidArgument,
          "dataset has " + std::to_string(data.pair_count()) +
              " pairs but the batch size is " + std::to_string(cfg.batch_size));
  }
  if (data.image.cols() != model.image_dim() ||
      data.text.cols() != model.text_dim()) {
    raise(ErrorCode::DimensionMismatch,
          "paired set dimensions do not match the model heads");
  }

  const std::size_t total = data.pair_count();
  const std::size_t batches_per_epoch = total / cfg.batch_size;

  AdamState st_wimg(model.w_img.storage().size());
  AdamState st_bimg(model.b_img.size());
  AdamState st_wtxt(model.w_txt.storage().size());
  AdamState st_btxt(model.b_txt.size());
  AdamState st_tau(1);

  TrainResult result;
  std::vector<std::size_t> order(total);
  MatrixF img_batch(cfg.batch_size, data.image.cols());
  MatrixF txt_batch(cfg.batch_size, data.text.cols());

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    SplitMix64 rng(derive_seed(cfg.seed, epoch));
    for (std::size_t i = total - 1; i > 0; --i) {
      const std::size_t j = static_cast<std::size_t>(rng.next_below(i + 1));
      std::swap(order[i], order[j]);
    }

    for (std::size_t b = 0; b < batches_per_epoch; ++b) {
      for (std::size_t r = 0; r < cfg.batch_size; ++r) {
        const std::size_t src = order[b * cfg.batch_size + r];
        std::copy(data.image.row(src).begin(), data.image.row(src).end(),
                  img_batch.row(r).begin());
        std::copy(data.text.row(src).begin(), data.text.row(src).end(),
                  txt_batch.row(r).begin());
      }

      LossAndGradients lg;
      try {
        lg = loss_gradients(model, img_batch, txt_batch);
      } catch (const Error& e) {
        if (exit_class(e.code()) == 4) {  // numerical failure mid-forward
          raise(ErrorCode::Divergence,
                "training diverged at step " + std::to_string(step) + ": " +
                    e.what());
        }
        throw;
      }
      if (!std::isfinite(lg.loss)) {
        raise(ErrorCode::Divergence,
              "loss became non-finite at step " + std::to_string(step));
      }
      result.loss_trace.push_back(lg.loss);
      ++step;

      const double bias1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
      const double bias2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
      adam_update(model.w_img.storage(), lg.grads.w_img.storage(), st_wimg,
                  cfg, cfg.weight_decay, bias1, bias2);
      adam_update(model.w_txt.storage(), lg.grads.w_txt.storage(), st_wtxt,
                  cfg, cfg.weight_decay, bias1, bias2);
      if (model.use_bias) {
        adam_update(model.b_img, lg.grads.b_img, st_bimg, cfg, 0.0, bias1,
                    bias2);
        adam_update(model.b_txt, lg.grads.b_txt, st_btxt, cfg, 0.0, bias1,
                    bias2);
      }
      if (model.tau_trainable) {
        double p[1] = {model.log_tau};
        const double g[1] = {lg.grads.log_tau};
        adam_update(std::span<double>(p, 1), std::span<const double>(g, 1),
                    st_tau, cfg, 0.0, bias1, bias2);
        model.log_tau = p[0];
      }
    }
  }
  result.model = std::move(model);
  return result;
}

double retrieval_top1(const AlignmentModel& model, const MatrixF& image,
                      const MatrixF& text) {
  if (image.rows() != text.rows() || image.rows() == 0) {
    raise(ErrorCode::ShapeMismatch, "retrieval needs matched non-empty sets");
  }
  const MatrixD u = project(model, Side::Image, image);
  const MatrixD v = project(model, Side::Text, text);
  const std::size_t m = u.rows();
  std::size_t hits = 0;
  for (std::size_t i = 0; i < m; ++i) {
    double best = -std::numeric_limits<double>::infinity();
    std::size_t best_j = 0;
    for (std::size_t j = 0; j < m; ++j) {
      double dot = 0.0;
      for (std::size_t d = 0; d < u.cols(); ++d) dot += u(i, d) * v(j, d);
      if (dot > best) {
        best = dot;
        best_j = j;
      }
    }
    if (best_j == i) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(m);
}

// --- model serialization ----------------------------------------------------

namespace {

ordered_json matrix_rows_f32(const MatrixD& m) {
  ordered_json rows = ordered_json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    ordered_json row = ordered_json::array();
    for (std::size_t c = 0; c < m.cols(); ++c) {
      const float narrowed = static_cast<float>(m(r, c));
      if (!std::isfinite(narrowed)) {
        raise(ErrorCode::NonFinite, "refusing to serialize non-finite weight");
      }
      row.push_back(static_cast<double>(narrowed));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

MatrixD rows_to_matrix(const ordered_json& rows, const std::string& what) {
  if (!rows.is_array() || rows.empty() || !rows[0].is_array()) {
    raise(ErrorCode::BadFormat, what + ": expected an array of rows");
  }
  MatrixD m(rows.size(), rows[0].size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != m.cols()) {
      raise(ErrorCode::RaggedDimensions, what + ": ragged rows");
    }
    for (std::size_t c = 0; c < m.cols(); ++c) {
      m(r, c) = rows[r][c].get<double>();
    }
  }
  return m;
}

}  // namespace

void write_model(const AlignmentModel& model,
                 const std::filesystem::path& path,
                 const std::map<std::string, std::string>& provenance) {
  model.validate();
  ordered_json doc;
  doc["format"] = "mizero-alignment-model";
  doc["version"] = 1;
  ordered_json prov = ordered_json::object();
  for (const auto& [key, value] : provenance) prov[key] = value;
  doc["provenance"] = std::move(prov);
  doc["shared_dim"] = model.shared_dim();
  doc["image_dim"] = model.image_dim();
  doc["text_dim"] = model.text_dim();
  doc["logit_convention"] = "multiply";  // logits are tau * cosine
  doc["tau"] = model.tau();
  doc["log_tau"] = model.log_tau;
  doc["tau_trainable"] = model.tau_trainable;
  doc["use_bias"] = model.use_bias;
  doc["w_img"] = matrix_rows_f32(model.w_img);
  doc["b_img"] = model.b_img;
  doc["w_txt"] = matrix_rows_f32(model.w_txt);
  doc["b_txt"] = model.b_txt;

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    raise(ErrorCode::FileNotFound, "cannot create '" + path.string() + "'");
  }
  out << doc.dump(2) << '\n';
}

AlignmentModel read_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    raise(ErrorCode::FileNotFound, "cannot open '" + path.string() + "'");
  }
  ordered_json doc = ordered_json::parse(in, nullptr, false);
  if (doc.is_discarded() || !doc.is_object() ||
      doc.value("format", "") != "mizero-alignment-model") {
    raise(ErrorCode::BadMagic,
          "'" + path.string() + "' is not an alignment model document");
  }
  if (doc.value("version", 0) != 1) {
    raise(ErrorCode::UnsupportedVersion,
          "'" + path.string() + "' has an unsupported model version");
  }
  AlignmentModel model;
  model.w_img = rows_to_matrix(doc["w_img"], "w_img");
  model.w_txt = rows_to_matrix(doc["w_txt"], "w_txt");
  model.b_img = doc["b_img"].get<std::vector<double>>();
  model.b_txt = doc["b_txt"].get<std::vector<double>>();
  model.log_tau = doc["log_tau"].get<double>();
  model.tau_trainable = doc.value("tau_trainable", false);
  model.use_bias = doc.value("use_bias", true);
  model.validate();
  return model;
}

void write_loss_trace(const std::vector<double>& trace,
                      const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    raise(ErrorCode::FileNotFound, "cannot create '" + path.string() + "'");
  }
  out << "step,loss\n";
  char buf[64];
  for (std::size_t i = 0; i < trace.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", trace[i]);
    out << i << ',' << buf << '\n';
  }
}

}  // namespace mizero
