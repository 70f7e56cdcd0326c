#include "nbl/toymodel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

namespace nbl::toy {

namespace {

constexpr double kNormEps = 1e-5;

void require(bool ok, const std::string& what) {
  if (!ok) throw ValidationError("invalid toy config: " + what);
}

Matrix rms_norm(const Matrix& x, const Vector& scale) {
  Matrix out(x.rows(), x.cols());
  const double dim = static_cast<double>(x.rows());
  for (Eigen::Index t = 0; t < x.cols(); ++t) {
    const double inv = 1.0 / std::sqrt(x.col(t).squaredNorm() / dim + kNormEps);
    out.col(t) = x.col(t).cwiseProduct(scale) * inv;
  }
  return out;
}

double gelu(double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); }

// 53-bit uniform on [-sqrt(3), sqrt(3)); only exact IEEE operations so
// results match across platforms.
class WeightStream {
 public:
  explicit WeightStream(std::uint64_t seed) : rng_(seed) {}

  Matrix draw(Eigen::Index rows, Eigen::Index cols, double fan_in) {
    const double scale = std::sqrt(3.0) / std::sqrt(fan_in);
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) {
        const double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53;  // [0, 1)
        m(r, c) = (2.0 * u - 1.0) * scale;
      }
    }
    return m;
  }

 private:
  std::mt19937_64 rng_;
};

}  // namespace

void ToyConfig::validate() const {
  require(layers >= 1, "layers must be >= 1");
  require(width >= 1, "width must be >= 1");
  require(heads >= 1, "heads must be >= 1");
  require(kv_groups >= 1, "kv_groups must be >= 1");
  require(ffn_width >= 1, "ffn_width must be >= 1");
  require(vocab >= 1, "vocab must be >= 1");
  require(max_context >= 1, "max_context must be >= 1");
  require(heads % kv_groups == 0, "kv_groups (" + std::to_string(kv_groups) +
                                      ") must divide heads (" + std::to_string(heads) + ")");
  require(width % heads == 0, "heads (" + std::to_string(heads) + ") must divide width (" +
                                  std::to_string(width) + ")");
  require(layers <= std::numeric_limits<std::uint16_t>::max() + 1u,
          "layer index must fit in 16 bits");
}

ToyTransformer::ToyTransformer(ToyConfig config) : config_(config) {
  config_.validate();
  blocks_.resize(config_.layers);
}

ToyTransformer init_random(const ToyConfig& config) {
  ToyTransformer model(config);
  const Eigen::Index d = config.width;
  const Eigen::Index kv = config.kv_width();
  const Eigen::Index ff = config.ffn_width;
  WeightStream ws(config.seed);

  model.token_embedding = ws.draw(config.vocab, d, static_cast<double>(config.vocab));
  model.position_embedding =
      ws.draw(config.max_context, d, static_cast<double>(config.max_context));
  for (Block& b : model.blocks()) {
    b.kind = LayerKind::kAttention;
    b.attn_norm = Vector::Ones(d);
    b.wq = ws.draw(d, d, static_cast<double>(d));
    b.wk = ws.draw(d, kv, static_cast<double>(d));
    b.wv = ws.draw(d, kv, static_cast<double>(d));
    b.wo = ws.draw(d, d, static_cast<double>(d));
    b.mlp_norm = Vector::Ones(d);
    b.w_up = ws.draw(d, ff, static_cast<double>(d));
    b.w_down = ws.draw(ff, d, static_cast<double>(ff));
  }
  model.final_norm = Vector::Ones(d);
  model.unembedding = ws.draw(d, config.vocab, static_cast<double>(d));
  return model;
}

Matrix ToyTransformer::attention_sublayer(LayerIndex layer, const Matrix& x,
                                          double* max_row_error) const {
  if (layer >= blocks_.size()) throw ValidationError("layer index out of range");
  const Block& b = blocks_[layer];
  if (b.kind == LayerKind::kLinearized) return lmmse::apply(*b.linear, x);
  if (b.wq.size() == 0) throw ValidationError("layer has no attention weights");

  const Eigen::Index n = x.cols();
  const Eigen::Index hd = config_.head_dim();
  const Eigen::Index per_group = config_.heads / config_.kv_groups;
  const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));

  const Matrix a = rms_norm(x, b.attn_norm);
  const Matrix q = b.wq.transpose() * a;
  const Matrix k = b.wk.transpose() * a;
  const Matrix v = b.wv.transpose() * a;

  Matrix heads_out(config_.width, n);
  for (Eigen::Index head = 0; head < static_cast<Eigen::Index>(config_.heads); ++head) {
    const Eigen::Index group = head / per_group;
    const auto qh = q.middleRows(head * hd, hd);
    const auto kh = k.middleRows(group * hd, hd);
    const auto vh = v.middleRows(group * hd, hd);
    // scores(s, t): key s against query t; only s <= t is kept.
    Matrix probs = (kh.transpose() * qh) * inv_sqrt_hd;
    for (Eigen::Index t = 0; t < n; ++t) {
      auto col = probs.col(t);
      const double mx = col.head(t + 1).maxCoeff();
      double sum = 0.0;
      for (Eigen::Index s = 0; s <= t; ++s) {
        col(s) = std::exp(col(s) - mx);
        sum += col(s);
      }
      col.head(t + 1) /= sum;
      col.tail(n - t - 1).setZero();
      if (max_row_error != nullptr) {
        *max_row_error = std::max(*max_row_error, std::abs(col.sum() - 1.0));
      }
    }
    heads_out.middleRows(head * hd, hd).noalias() = vh * probs;
  }
  return b.wo.transpose() * heads_out;
}

ForwardResult ToyTransformer::forward(std::span<const TokenId> tokens,
                                      const std::set<LayerIndex>& capture) const {
  const Eigen::Index n = static_cast<Eigen::Index>(tokens.size());
  if (n < 1) throw ValidationError("forward: empty token sequence");
  if (tokens.size() > config_.max_context) {
    throw ValidationError("forward: sequence length " + std::to_string(tokens.size()) +
                          " exceeds max context " + std::to_string(config_.max_context));
  }
  for (const TokenId id : tokens) {
    if (id >= config_.vocab) {
      throw ValidationError("forward: token id " + std::to_string(id) + " >= vocab " +
                            std::to_string(config_.vocab));
    }
  }
  for (const LayerIndex k : capture) {
    if (k >= config_.layers) throw ValidationError("forward: capture layer out of range");
  }

  ForwardResult result;
  Matrix x(config_.width, n);
  for (Eigen::Index t = 0; t < n; ++t) {
    x.col(t) = (token_embedding.row(tokens[t]) + position_embedding.row(t)).transpose();
  }

  for (LayerIndex k = 0; k < blocks_.size(); ++k) {
    const Block& b = blocks_[k];
    Matrix y = attention_sublayer(k, x, &result.max_softmax_row_error);
    if (capture.contains(k)) result.captures[k] = CapturedLayer{x, y};
    x += y;
    Matrix hidden = b.w_up.transpose() * rms_norm(x, b.mlp_norm);
    hidden = hidden.unaryExpr(&gelu);
    x.noalias() += b.w_down.transpose() * hidden;
  }

  result.logits = (unembedding.transpose() * rms_norm(x, final_norm)).transpose();
  return result;
}

std::vector<LayerIndex> ToyTransformer::linearized_layers() const {
  std::vector<LayerIndex> out;
  for (LayerIndex k = 0; k < blocks_.size(); ++k) {
    if (blocks_[k].kind == LayerKind::kLinearized) out.push_back(k);
  }
  return out;
}

ToyTransformer substitute(const ToyTransformer& model, std::span<const LayerIndex> layers,
                          std::span<const lmmse::LinearMap> maps) {
  if (layers.size() != maps.size()) {
    throw ValidationError("substitute: " + std::to_string(layers.size()) + " layers but " +
                          std::to_string(maps.size()) + " maps");
  }
  const auto d = static_cast<Eigen::Index>(model.config().width);
  ToyTransformer out = model;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerIndex k = layers[i];
    if (k >= model.config().layers) throw ValidationError("substitute: layer out of range");
    const lmmse::LinearMap& map = maps[i];
    if (map.h_in() != d || map.h_out() != d || map.bias.size() != d) {
      throw ValidationError("substitute: map for layer " + std::to_string(k) +
                            " is not " + std::to_string(d) + "x" + std::to_string(d));
    }
    Block& b = out.blocks()[k];
    b.kind = LayerKind::kLinearized;
    b.linear = map;
    b.linear->source_layer = k;
  }
  return out;
}

namespace {

Vector log_softmax(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  const double mx = row.maxCoeff();
  const double lse = mx + std::log((row.array() - mx).exp().sum());
  return (row.array() - lse).transpose();
}

}  // namespace

Drift logit_drift(const Matrix& logits_a, const Matrix& logits_b) {
  if (logits_a.rows() != logits_b.rows() || logits_a.cols() != logits_b.cols()) {
    throw ValidationError("logit_drift: shape mismatch");
  }
  Drift drift;
  if (logits_a.size() == 0) return drift;
  double kl_total = 0.0;
  for (Eigen::Index t = 0; t < logits_a.rows(); ++t) {
    const Vector la = log_softmax(logits_a.row(t));
    const Vector lb = log_softmax(logits_b.row(t));
    kl_total += std::max(0.0, (la.array().exp() * (la - lb).array()).sum());
  }
  drift.mean_kl = kl_total / static_cast<double>(logits_a.rows());
  drift.max_abs = (logits_a - logits_b).cwiseAbs().maxCoeff();
  return drift;
}

Drift logit_drift(const ToyTransformer& a, const ToyTransformer& b,
                  std::span<const TokenId> tokens) {
  if (a.config().vocab != b.config().vocab) throw ValidationError("logit_drift: vocab mismatch");
  return logit_drift(a.forward(tokens).logits, b.forward(tokens).logits);
}

double perplexity(const Matrix& logits, std::span<const TokenId> tokens) {
  if (tokens.size() < 2) throw ValidationError("perplexity: need at least 2 tokens");
  if (static_cast<std::size_t>(logits.rows()) != tokens.size()) {
    throw ValidationError("perplexity: logits/tokens length mismatch");
  }
  double nll = 0.0;
  for (std::size_t t = 0; t + 1 < tokens.size(); ++t) {
    nll -= log_softmax(logits.row(static_cast<Eigen::Index>(t)))(tokens[t + 1]);
  }
  return std::exp(nll / static_cast<double>(tokens.size() - 1));
}

double perplexity(const ToyTransformer& model, std::span<const TokenId> tokens) {
  if (tokens.size() < 2) throw ValidationError("perplexity: need at least 2 tokens");
  return perplexity(model.forward(tokens).logits, tokens);
}

}  // namespace nbl::toy
