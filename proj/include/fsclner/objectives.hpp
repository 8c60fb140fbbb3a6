#pragma once

// Prompt-tuning cross entropy, the distillation position mask, masked KL
// distillation against a teacher with a smaller output support, and the
// weighted total. Both losses are per-position means.

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fsclner/error.hpp"
#include "fsclner/matrix.hpp"
#include "fsclner/prompting.hpp"

namespace fsclner {

struct LossConfig {
  double alpha = 1.0;  // distillation weight
  double beta = 1.0;   // prompt-tuning weight

  void validate() const {
    if (!(alpha >= 0.0) || !(beta >= 0.0)) throw Error(Errc::InvalidConfig, "loss weights must be >= 0");
    if (alpha == 0.0 && beta == 0.0) throw Error(Errc::InvalidConfig, "alpha and beta cannot both be zero");
  }

  bool operator==(const LossConfig&) const = default;
};

/// true = the position's teacher distribution is distilled.
struct KdMask {
  std::vector<bool> keep;

  std::size_t size() const { return keep.size(); }
  bool operator[](std::size_t i) const { return keep[i]; }
  std::size_t count() const {
    std::size_t n = 0;
    for (bool b : keep) n += b;
    return n;
  }
  bool operator==(const KdMask&) const = default;
};

/// Loss value together with its gradient w.r.t. the logits it was computed from.
struct LossWithGrad {
  double value = 0.0;
  Matrix grad;
};

inline std::vector<std::size_t> all_positions(std::size_t n) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  return p;
}

/// Current-task entity positions plus template anchor slots.
inline std::vector<std::size_t> anchor_positions(const PromptInstance& inst) {
  std::vector<std::size_t> p;
  for (std::size_t i = 0; i < inst.roles.size(); ++i)
    if (inst.roles[i] == Role::ContentCurrentEntity || inst.roles[i] == Role::TemplateAnchorSlot) p.push_back(i);
  return p;
}

inline LossWithGrad pt_loss_with_grad(const Matrix& logits, std::span<const int> target_ids,
                                      std::span<const std::size_t> positions) {
  if (positions.empty()) throw Error(Errc::EmptyPositionSet, "prompt-tuning loss over zero positions");
  if (static_cast<std::size_t>(logits.rows()) != target_ids.size())
    throw Error(Errc::DimensionMismatch, "logits rows != target length");
  LossWithGrad out{0.0, Matrix::Zero(logits.rows(), logits.cols())};
  const double inv = 1.0 / static_cast<double>(positions.size());
  for (std::size_t p : positions) {
    const int target = target_ids[p];
    if (target < 0 || target >= logits.cols())
      throw Error(Errc::IdOutOfRange, "target id " + std::to_string(target) + " outside logits support");
    const auto row = logits.row(static_cast<Eigen::Index>(p));
    const RowVector lp = log_softmax(row);
    out.value -= lp(target) * inv;
    out.grad.row(static_cast<Eigen::Index>(p)) += lp.array().exp().matrix() * inv;
    out.grad(static_cast<Eigen::Index>(p), target) -= inv;
  }
  return out;
}

inline double pt_loss(const Matrix& logits, std::span<const int> target_ids, std::span<const std::size_t> positions) {
  return pt_loss_with_grad(logits, target_ids, positions).value;
}

/// Distill everywhere except the gold entity tokens of the current task.
inline KdMask kd_position_mask(const PromptInstance& inst) {
  KdMask m;
  m.keep.reserve(inst.roles.size());
  for (Role r : inst.roles) m.keep.push_back(r != Role::ContentCurrentEntity);
  return m;
}

/// KL(teacher || student) on the teacher's support S. The student's first S
/// logits are renormalized over S; its remaining columns receive no gradient.
inline LossWithGrad kd_loss_with_grad(const Matrix& student_logits, const Matrix& teacher_logits, const KdMask& mask,
                                      Eigen::Index support) {
  if (teacher_logits.cols() != support || student_logits.cols() < support)
    throw Error(Errc::SupportMismatch, "teacher support " + std::to_string(teacher_logits.cols()) + ", expected " +
                                           std::to_string(support) + ", student " +
                                           std::to_string(student_logits.cols()));
  if (student_logits.rows() != teacher_logits.rows() || mask.size() != static_cast<std::size_t>(student_logits.rows()))
    throw Error(Errc::SupportMismatch, "student/teacher/mask lengths differ");
  LossWithGrad out{0.0, Matrix::Zero(student_logits.rows(), student_logits.cols())};
  const std::size_t n = mask.count();
  if (n == 0) return out;
  const double inv = 1.0 / static_cast<double>(n);
  for (Eigen::Index j = 0; j < student_logits.rows(); ++j) {
    if (!mask[static_cast<std::size_t>(j)]) continue;
    const RowVector log_p = log_softmax(teacher_logits.row(j));
    const RowVector log_q = log_softmax(student_logits.row(j).head(support));
    const RowVector p = log_p.array().exp().matrix();
    double kl = 0.0;
    for (Eigen::Index m = 0; m < support; ++m)
      if (p(m) > 0.0) kl += p(m) * (log_p(m) - log_q(m));
    out.value += kl * inv;
    out.grad.row(j).head(support) = (log_q.array().exp() - p.array()).matrix() * inv;
  }
  return out;
}

inline double kd_loss(const Matrix& student_logits, const Matrix& teacher_logits, const KdMask& mask,
                      Eigen::Index support) {
  return kd_loss_with_grad(student_logits, teacher_logits, mask, support).value;
}

inline double total_loss(double l_kd, double l_pt, const LossConfig& cfg) {
  if (!std::isfinite(l_kd) || !std::isfinite(l_pt)) throw Error(Errc::NonFiniteInput, "loss term is not finite");
  return cfg.alpha * l_kd + cfg.beta * l_pt;
}

}  // namespace fsclner
