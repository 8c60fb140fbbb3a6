#pragma once

#include <cmath>
#include <vector>

#include "fsclner/error.hpp"
#include "fsclner/matrix.hpp"
#include "fsclner/model.hpp"

namespace fsclner {

/// Adam with bias correction. Moment buffers follow the model's
/// visit_params order and are zero-padded if a tensor grows.
class Adam {
 public:
  explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) : b1_(beta1), b2_(beta2), eps_(eps) {}

  template <typename M>
  void step(M& model, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    std::size_t i = 0;
    model.visit_params([&](Param& p) {
      if (i == m_.size()) {
        m_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
        v_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
      }
      Matrix& m = m_[i];
      Matrix& v = v_[i];
      ++i;
      if (m.rows() != p.value.rows() || m.cols() != p.value.cols()) {
        Matrix nm = Matrix::Zero(p.value.rows(), p.value.cols()), nv = nm;
        const auto r = std::min(m.rows(), nm.rows()), c = std::min(m.cols(), nm.cols());
        nm.topLeftCorner(r, c) = m.topLeftCorner(r, c);
        nv.topLeftCorner(r, c) = v.topLeftCorner(r, c);
        m = std::move(nm);
        v = std::move(nv);
      }
      if (!p.trainable || p.value.size() == 0) return;
      m = b1_ * m + (1.0 - b1_) * p.grad;
      v = b2_ * v + (1.0 - b2_) * p.grad.cwiseProduct(p.grad);
      p.value.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
    });
  }

  long steps() const { return t_; }

 private:
  double b1_, b2_, eps_;
  long t_ = 0;
  std::vector<Matrix> m_, v_;
};

/// One optimizer update from the gradients currently accumulated in `model`.
template <typename M>
void grad_step(M& model, double loss_value, Adam& opt, double lr) {
  if (!std::isfinite(loss_value)) throw Error(Errc::NonFiniteLoss, "loss is not finite");
  opt.step(model, lr);
}

}  // namespace fsclner
