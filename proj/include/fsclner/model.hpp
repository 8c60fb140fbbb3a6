#pragma once

// Tiny bidirectional transformer encoder with an MLM head whose output rows
// can be appended at runtime (one per anchor token). Forward and backward
// passes are written out by hand; everything is double precision and
// single-threaded so results are bit-reproducible.

#include <atomic>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "fsclner/error.hpp"
#include "fsclner/matrix.hpp"
#include "fsclner/rng.hpp"

namespace fsclner {

enum class HeadMode { Anchor, Classifier };

struct ModelConfig {
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 2;
  int ffn_mult = 4;
  bool tie_weights = true;
  double init_std = 0.02;        // linear layers
  double embed_init_std = 0.1;   // token embedding rows
  double position_scale = 0.1;   // sinusoidal position encoding amplitude
  double dropout = 0.0;          // the reference model never drops
  HeadMode head_mode = HeadMode::Anchor;
  std::uint64_t seed = 0;

  bool operator==(const ModelConfig&) const = default;
};

struct Param {
  std::string name;
  Matrix value;
  Matrix grad;
  bool trainable = true;

  void init(std::string n, Eigen::Index rows, Eigen::Index cols) {
    name = std::move(n);
    value = Matrix::Zero(rows, cols);
    grad = Matrix::Zero(rows, cols);
  }
};

/// Copyable atomic tally of forward passes; diagnostic only.
class CallCounter {
 public:
  CallCounter() = default;
  CallCounter(const CallCounter& o) : n_(o.get()) {}
  CallCounter& operator=(const CallCounter& o) {
    n_.store(o.get());
    return *this;
  }
  void bump() const { n_.fetch_add(1, std::memory_order_relaxed); }
  std::uint64_t get() const { return n_.load(std::memory_order_relaxed); }

 private:
  mutable std::atomic<std::uint64_t> n_{0};
};

namespace detail {

inline constexpr double kLnEps = 1e-5;
inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

struct LayerNormCache {
  Matrix xhat;
  Vector rstd;
};

inline Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, LayerNormCache* cache) {
  const Eigen::Index n = x.rows(), d = x.cols();
  Matrix xhat(n, d);
  Vector rstd(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = x.row(i).mean();
    const double var = (x.row(i).array() - mu).square().mean();
    rstd(i) = 1.0 / std::sqrt(var + kLnEps);
    xhat.row(i) = (x.row(i).array() - mu) * rstd(i);
  }
  Matrix y = (xhat.array().rowwise() * gain.row(0).array()).rowwise() + bias.row(0).array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return y;
}

inline Matrix layer_norm_backward(const Matrix& dy, const LayerNormCache& c, Param& gain, Param& bias) {
  gain.grad.row(0) += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  bias.grad.row(0) += dy.colwise().sum();
  const Matrix dxhat = dy.array().rowwise() * gain.value.row(0).array();
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const double m1 = dxhat.row(i).mean();
    const double m2 = (dxhat.row(i).array() * c.xhat.row(i).array()).mean();
    dx.row(i) = (dxhat.row(i).array() - m1 - c.xhat.row(i).array() * m2) * c.rstd(i);
  }
  return dx;
}

inline double gelu(double u) { return 0.5 * u * (1.0 + std::tanh(kGeluC * (u + 0.044715 * u * u * u))); }

inline double gelu_grad(double u) {
  const double t = std::tanh(kGeluC * (u + 0.044715 * u * u * u));
  return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * 0.044715 * u * u);
}

inline Matrix affine(const Matrix& x, const Param& w, const Param& b) {
  return (x * w.value).rowwise() + b.value.row(0);
}

inline void affine_backward_params(const Matrix& x, const Matrix& dy, Param& w, Param& b) {
  w.grad.noalias() += x.transpose() * dy;
  b.grad.row(0) += dy.colwise().sum();
}

inline void fill_normal(Matrix& m, double std, Rng& rng) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = std * rng.normal();
}

}  // namespace detail

struct EncoderBlock {
  Param ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;

  template <typename F>
  void visit(F&& f) {
    for (Param* p : {&ln1_g, &ln1_b, &wq, &bq, &wk, &bk, &wv, &bv, &wo, &bo, &ln2_g, &ln2_b, &w1, &b1, &w2, &b2})
      f(*p);
  }
  template <typename F>
  void visit(F&& f) const {
    for (const Param* p :
         {&ln1_g, &ln1_b, &wq, &bq, &wk, &bk, &wv, &bv, &wo, &bo, &ln2_g, &ln2_b, &w1, &b1, &w2, &b2})
      f(*p);
  }
};

/// Intermediate activations kept by forward_train for the backward pass.
struct ForwardCache {
  struct Layer {
    Matrix x_in;
    detail::LayerNormCache ln1;
    Matrix a1, q, k, v;
    std::vector<Matrix> probs;  // per head, N x N
    Matrix attn;
    Matrix x_mid;
    detail::LayerNormCache ln2;
    Matrix a2, u, g;
  };
  std::vector<int> ids;
  std::vector<Layer> layers;
  detail::LayerNormCache lnf;
  Matrix hidden;  // final encoder states H, N x d
  Matrix logits;
};

class TinyRefModel {
 public:
  TinyRefModel() = default;

  TinyRefModel(const ModelConfig& cfg, std::size_t base_vocab) : cfg_(cfg) {
    if (cfg.d_model <= 0 || cfg.n_heads <= 0 || cfg.d_model % cfg.n_heads != 0 || cfg.n_layers < 0)
      throw Error(Errc::InvalidConfig, "d_model must be a positive multiple of n_heads");
    const Eigen::Index d = cfg.d_model, f = static_cast<Eigen::Index>(cfg.d_model) * cfg.ffn_mult;
    const auto v = static_cast<Eigen::Index>(base_vocab);
    Rng rng(derive_seed(cfg.seed, "model-init"));

    tok_emb_.init("tok_emb", v, d);
    detail::fill_normal(tok_emb_.value, cfg.embed_init_std, rng);
    if (!cfg.tie_weights) {
      head_w_.init("head_w", v, d);
      detail::fill_normal(head_w_.value, cfg.embed_init_std, rng);
    }
    head_b_.init("head_b", 1, v);
    cls_w_.init("cls_w", 0, d);
    cls_b_.init("cls_b", 1, 0);

    blocks_.resize(static_cast<std::size_t>(cfg.n_layers));
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
      auto& b = blocks_[l];
      const std::string p = "block" + std::to_string(l) + ".";
      b.ln1_g.init(p + "ln1_g", 1, d);
      b.ln1_g.value.setOnes();
      b.ln1_b.init(p + "ln1_b", 1, d);
      b.wq.init(p + "wq", d, d);
      b.bq.init(p + "bq", 1, d);
      b.wk.init(p + "wk", d, d);
      b.bk.init(p + "bk", 1, d);
      b.wv.init(p + "wv", d, d);
      b.bv.init(p + "bv", 1, d);
      b.wo.init(p + "wo", d, d);
      b.bo.init(p + "bo", 1, d);
      b.ln2_g.init(p + "ln2_g", 1, d);
      b.ln2_g.value.setOnes();
      b.ln2_b.init(p + "ln2_b", 1, d);
      b.w1.init(p + "w1", d, f);
      b.b1.init(p + "b1", 1, f);
      b.w2.init(p + "w2", f, d);
      b.b2.init(p + "b2", 1, d);
      for (Param* w : {&b.wq, &b.wk, &b.wv, &b.wo, &b.w1, &b.w2}) detail::fill_normal(w->value, cfg.init_std, rng);
    }
    lnf_g_.init("lnf_g", 1, d);
    lnf_g_.value.setOnes();
    lnf_b_.init("lnf_b", 1, d);
  }

  const ModelConfig& config() const { return cfg_; }
  int d_model() const { return cfg_.d_model; }
  int n_layers() const { return cfg_.n_layers; }
  HeadMode head_mode() const { return cfg_.head_mode; }
  std::size_t vocab_size() const { return static_cast<std::size_t>(tok_emb_.value.rows()); }

  /// Width of the logits: extended vocabulary, or O + seen classes.
  std::size_t output_size() const {
    return cfg_.head_mode == HeadMode::Anchor ? vocab_size() : static_cast<std::size_t>(cls_w_.value.rows());
  }

  const Matrix& embedding() const { return tok_emb_.value; }
  const Matrix& head_weight() const { return cfg_.tie_weights ? tok_emb_.value : head_w_.value; }
  const Matrix& head_bias() const { return head_b_.value; }

  std::vector<double> embedding_row(int id) const {
    check_id(id);
    const auto row = tok_emb_.value.row(id);
    return {row.data(), row.data() + row.size()};
  }

  /// Final-layer hidden states H (N x d_model).
  Matrix encode(std::span<const int> ids) const { return run(ids, nullptr); }

  Matrix forward(std::span<const int> ids) const {
    calls_.bump();
    return head(run(ids, nullptr));
  }

  ForwardCache forward_train(std::span<const int> ids) const {
    calls_.bump();
    ForwardCache c;
    c.hidden = run(ids, &c);
    c.logits = head(c.hidden);
    return c;
  }

  /// Accumulates parameter gradients for d(loss)/d(logits) = dlogits.
  void backward(const ForwardCache& c, const Matrix& dlogits) {
    Matrix dh;
    if (cfg_.head_mode == HeadMode::Anchor) {
      Param& w = cfg_.tie_weights ? tok_emb_ : head_w_;
      w.grad.noalias() += dlogits.transpose() * c.hidden;
      head_b_.grad.row(0) += dlogits.colwise().sum();
      dh = dlogits * w.value;
    } else {
      cls_w_.grad.noalias() += dlogits.transpose() * c.hidden;
      cls_b_.grad.row(0) += dlogits.colwise().sum();
      dh = dlogits * cls_w_.value;
    }
    Matrix dx = detail::layer_norm_backward(dh, c.lnf, lnf_g_, lnf_b_);

    const int nh = cfg_.n_heads;
    const Eigen::Index dk = cfg_.d_model / nh;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
    for (std::size_t li = blocks_.size(); li-- > 0;) {
      auto& b = blocks_[li];
      const auto& L = c.layers[li];
      // feed-forward sublayer
      Matrix dg = dx * b.w2.value.transpose();
      detail::affine_backward_params(L.g, dx, b.w2, b.b2);
      Matrix du = dg;
      for (Eigen::Index i = 0; i < du.size(); ++i) du.data()[i] *= detail::gelu_grad(L.u.data()[i]);
      detail::affine_backward_params(L.a2, du, b.w1, b.b1);
      Matrix da2 = du * b.w1.value.transpose();
      dx += detail::layer_norm_backward(da2, L.ln2, b.ln2_g, b.ln2_b);
      // attention sublayer
      Matrix dattn = dx * b.wo.value.transpose();
      detail::affine_backward_params(L.attn, dx, b.wo, b.bo);
      Matrix dq = Matrix::Zero(L.q.rows(), L.q.cols());
      Matrix dkm = Matrix::Zero(L.k.rows(), L.k.cols());
      Matrix dv = Matrix::Zero(L.v.rows(), L.v.cols());
      for (int h = 0; h < nh; ++h) {
        const Eigen::Index off = h * dk;
        const Matrix& P = L.probs[static_cast<std::size_t>(h)];
        const Matrix dO = dattn.middleCols(off, dk);
        const Matrix dP = dO * L.v.middleCols(off, dk).transpose();
        dv.middleCols(off, dk).noalias() += P.transpose() * dO;
        const Vector rs = (dP.array() * P.array()).rowwise().sum();
        const Matrix dS = (P.array() * (dP.colwise() - rs).array()).matrix();
        dq.middleCols(off, dk).noalias() += scale * dS * L.k.middleCols(off, dk);
        dkm.middleCols(off, dk).noalias() += scale * dS.transpose() * L.q.middleCols(off, dk);
      }
      detail::affine_backward_params(L.a1, dq, b.wq, b.bq);
      detail::affine_backward_params(L.a1, dkm, b.wk, b.bk);
      detail::affine_backward_params(L.a1, dv, b.wv, b.bv);
      Matrix da1 = dq * b.wq.value.transpose() + dkm * b.wk.value.transpose() + dv * b.wv.value.transpose();
      dx += detail::layer_norm_backward(da1, L.ln1, b.ln1_g, b.ln1_b);
    }
    for (std::size_t j = 0; j < c.ids.size(); ++j) tok_emb_.grad.row(c.ids[j]) += dx.row(static_cast<Eigen::Index>(j));
  }

  void zero_grad() {
    visit_params([](Param& p) { p.grad.setZero(); });
  }

  /// Appends one embedding/head row per vector; existing rows stay bit-identical
  /// and the new bias entries are 0.
  void extend_vocab(const std::vector<std::vector<double>>& rows) {
    for (const auto& r : rows)
      if (r.size() != static_cast<std::size_t>(cfg_.d_model))
        throw Error(Errc::DimensionMismatch, "anchor vector has dimension " + std::to_string(r.size()) +
                                                 ", model has " + std::to_string(cfg_.d_model));
    const Eigen::Index old = tok_emb_.value.rows();
    const Eigen::Index add = static_cast<Eigen::Index>(rows.size());
    auto grow = [&](Param& p) {
      p.value.conservativeResize(old + add, Eigen::NoChange);
      p.grad.conservativeResize(old + add, Eigen::NoChange);
      for (Eigen::Index i = 0; i < add; ++i) {
        p.value.row(old + i) = Eigen::Map<const RowVector>(rows[static_cast<std::size_t>(i)].data(), cfg_.d_model);
        p.grad.row(old + i).setZero();
      }
    };
    grow(tok_emb_);
    if (!cfg_.tie_weights) grow(head_w_);
    head_b_.value.conservativeResize(Eigen::NoChange, old + add);
    head_b_.grad.conservativeResize(Eigen::NoChange, old + add);
    head_b_.value.rightCols(add).setZero();
    head_b_.grad.rightCols(add).setZero();
  }

  /// Classifier head: grows the per-token output layer by `n` classes.
  /// The first call should include the O class.
  void extend_classes(std::size_t n) {
    const Eigen::Index old = cls_w_.value.rows();
    const Eigen::Index add = static_cast<Eigen::Index>(n);
    Rng rng(derive_seed(cfg_.seed, "classifier-rows", static_cast<std::uint64_t>(old)));
    cls_w_.value.conservativeResize(old + add, cfg_.d_model);
    cls_w_.grad.conservativeResize(old + add, cfg_.d_model);
    Matrix fresh(add, cfg_.d_model);
    detail::fill_normal(fresh, cfg_.init_std, rng);
    cls_w_.value.bottomRows(add) = fresh;
    cls_w_.grad.bottomRows(add).setZero();
    cls_b_.value.conservativeResize(1, old + add);
    cls_b_.grad.conservativeResize(1, old + add);
    cls_b_.value.rightCols(add).setZero();
    cls_b_.grad.rightCols(add).setZero();
  }

  /// Marks encoder layers 1..n non-trainable. Embeddings and head stay trainable.
  void freeze_lower(int n) {
    if (n < 0 || n > cfg_.n_layers)
      throw Error(Errc::LayerIndexOutOfRange,
                  "cannot freeze " + std::to_string(n) + " of " + std::to_string(cfg_.n_layers) + " layers");
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
      const bool trainable = static_cast<int>(l) >= n;
      blocks_[l].visit([&](Param& p) { p.trainable = trainable; });
    }
    frozen_ = n;
  }

  int frozen_layers() const { return frozen_; }

  /// Visits every parameter tensor in a fixed order (tied head not repeated).
  template <typename F>
  void visit_params(F&& f) {
    f(tok_emb_);
    if (!cfg_.tie_weights) f(head_w_);
    f(head_b_);
    f(cls_w_);
    f(cls_b_);
    for (auto& b : blocks_) b.visit(f);
    f(lnf_g_);
    f(lnf_b_);
  }
  template <typename F>
  void visit_params(F&& f) const {
    f(tok_emb_);
    if (!cfg_.tie_weights) f(head_w_);
    f(head_b_);
    f(cls_w_);
    f(cls_b_);
    for (const auto& b : blocks_) b.visit(f);
    f(lnf_g_);
    f(lnf_b_);
  }

  /// FNV-1a over every parameter value.
  std::uint64_t param_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    visit_params([&](const Param& p) {
      const auto* bytes = reinterpret_cast<const unsigned char*>(p.value.data());
      for (std::size_t i = 0; i < static_cast<std::size_t>(p.value.size()) * sizeof(double); ++i) {
        h ^= bytes[i];
        h *= 0x100000001b3ULL;
      }
    });
    return h;
  }

  std::uint64_t forward_calls() const { return calls_.get(); }

 private:
  void check_id(int id) const {
    if (id < 0 || id >= tok_emb_.value.rows())
      throw Error(Errc::IdOutOfRange,
                  "token id " + std::to_string(id) + " >= vocabulary " + std::to_string(tok_emb_.value.rows()));
  }

  Matrix head(const Matrix& hidden) const {
    if (cfg_.head_mode == HeadMode::Anchor) return (hidden * head_weight().transpose()).rowwise() + head_b_.value.row(0);
    return (hidden * cls_w_.value.transpose()).rowwise() + cls_b_.value.row(0);
  }

  Matrix run(std::span<const int> ids, ForwardCache* cache) const {
    const Eigen::Index n = static_cast<Eigen::Index>(ids.size()), d = cfg_.d_model;
    Matrix x(n, d);
    for (Eigen::Index j = 0; j < n; ++j) {
      const int id = ids[static_cast<std::size_t>(j)];
      check_id(id);
      x.row(j) = tok_emb_.value.row(id);
      for (Eigen::Index i = 0; i < d; i += 2) {
        const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d));
        x(j, i) += cfg_.position_scale * std::sin(static_cast<double>(j) * freq);
        if (i + 1 < d) x(j, i + 1) += cfg_.position_scale * std::cos(static_cast<double>(j) * freq);
      }
    }
    if (cache) {
      cache->ids.assign(ids.begin(), ids.end());
      cache->layers.resize(blocks_.size());
    }
    const int nh = cfg_.n_heads;
    const Eigen::Index dk = d / nh;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
    for (std::size_t li = 0; li < blocks_.size(); ++li) {
      const auto& b = blocks_[li];
      ForwardCache::Layer* L = cache ? &cache->layers[li] : nullptr;
      detail::LayerNormCache ln1;
      Matrix a1 = detail::layer_norm(x, b.ln1_g.value, b.ln1_b.value, &ln1);
      Matrix q = detail::affine(a1, b.wq, b.bq);
      Matrix k = detail::affine(a1, b.wk, b.bk);
      Matrix v = detail::affine(a1, b.wv, b.bv);
      Matrix attn(n, d);
      std::vector<Matrix> probs;
      for (int h = 0; h < nh; ++h) {
        const Eigen::Index off = h * dk;
        Matrix s = scale * q.middleCols(off, dk) * k.middleCols(off, dk).transpose();
        for (Eigen::Index r = 0; r < n; ++r) s.row(r) = softmax(s.row(r));
        attn.middleCols(off, dk).noalias() = s * v.middleCols(off, dk);
        if (L) probs.push_back(std::move(s));
      }
      Matrix x_mid = x + detail::affine(attn, b.wo, b.bo);
      detail::LayerNormCache ln2;
      Matrix a2 = detail::layer_norm(x_mid, b.ln2_g.value, b.ln2_b.value, &ln2);
      Matrix u = detail::affine(a2, b.w1, b.b1);
      Matrix g = u.unaryExpr([](double z) { return detail::gelu(z); });
      Matrix x_out = x_mid + detail::affine(g, b.w2, b.b2);
      if (L) {
        L->x_in = std::move(x);
        L->ln1 = std::move(ln1);
        L->a1 = std::move(a1);
        L->q = std::move(q);
        L->k = std::move(k);
        L->v = std::move(v);
        L->probs = std::move(probs);
        L->attn = std::move(attn);
        L->x_mid = std::move(x_mid);
        L->ln2 = std::move(ln2);
        L->a2 = std::move(a2);
        L->u = std::move(u);
        L->g = std::move(g);
      }
      x = std::move(x_out);
    }
    return detail::layer_norm(x, lnf_g_.value, lnf_b_.value, cache ? &cache->lnf : nullptr);
  }

  ModelConfig cfg_;
  Param tok_emb_, head_w_, head_b_, cls_w_, cls_b_;
  std::vector<EncoderBlock> blocks_;
  Param lnf_g_, lnf_b_;
  int frozen_ = 0;
  CallCounter calls_;
};

/// What the continual-learning loop needs from an encoder + output head.
template <typename M>
concept SequenceEncoder = std::copy_constructible<M> &&
    requires(M m, const M cm, std::span<const int> ids, const ForwardCache& cache, const Matrix& g,
             const std::vector<std::vector<double>>& rows, int n, std::size_t k) {
  { cm.forward(ids) } -> std::same_as<Matrix>;
  { cm.forward_train(ids) } -> std::same_as<ForwardCache>;
  m.backward(cache, g);
  m.zero_grad();
  m.extend_vocab(rows);
  m.extend_classes(k);
  m.freeze_lower(n);
  { cm.embedding_row(n) } -> std::same_as<std::vector<double>>;
  { cm.output_size() } -> std::convertible_to<std::size_t>;
  { cm.vocab_size() } -> std::convertible_to<std::size_t>;
  { cm.n_layers() } -> std::convertible_to<int>;
  { cm.head_mode() } -> std::same_as<HeadMode>;
  { cm.param_hash() } -> std::same_as<std::uint64_t>;
  { cm.forward_calls() } -> std::same_as<std::uint64_t>;
};

static_assert(SequenceEncoder<TinyRefModel>);

/// Frozen copy of a model taken at a stage boundary. Only const forward
/// passes are exposed.
template <SequenceEncoder M>
class TeacherModel {
 public:
  explicit TeacherModel(const M& model) : model_(model), support_(model.output_size()) {}

  Matrix forward(std::span<const int> ids) const { return model_.forward(ids); }
  std::size_t support() const { return support_; }
  std::uint64_t param_hash() const { return model_.param_hash(); }
  const M& model() const { return model_; }

 private:
  M model_;
  std::size_t support_;
};

template <SequenceEncoder M>
TeacherModel<M> snapshot(const M& model) {
  return TeacherModel<M>(model);
}

}  // namespace fsclner
