#include <gtest/gtest.h>

#include <cmath>

#include "fsclner/objectives.hpp"
#include "fsclner/rng.hpp"

using namespace fsclner;

namespace {

Matrix random_logits(Rng& rng, Eigen::Index n, Eigen::Index c, double scale = 3.0) {
  Matrix m(n, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

// -log softmax(z)_t in long double, no max shift
long double ce_oracle(const Matrix& z, Eigen::Index row, int t) {
  long double s = 0.0L;
  for (Eigen::Index k = 0; k < z.cols(); ++k) s += std::exp(static_cast<long double>(z(row, k)));
  return std::log(s) - static_cast<long double>(z(row, t));
}

KdMask all_true(std::size_t n) { return KdMask{std::vector<bool>(n, true)}; }

}  // namespace

TEST(PtLoss, UniformLogitsGiveLogC) {
  const Matrix z = Matrix::Constant(1, 7, 0.3);
  const std::vector<int> t{4};
  const std::vector<std::size_t> p{0};
  EXPECT_NEAR(pt_loss(z, t, p), std::log(7.0), 1e-12);
}

TEST(PtLoss, HandComputedTwoPositions) {
  Matrix z(2, 2);
  z << 2, 0, 0, 1;
  const std::vector<int> t{0, 1};
  const std::vector<std::size_t> p{0, 1};
  const double a = -std::log(std::exp(2.0) / (std::exp(2.0) + 1.0));
  const double b = -std::log(std::exp(1.0) / (1.0 + std::exp(1.0)));
  EXPECT_NEAR(pt_loss(z, t, p), 0.5 * (a + b), 1e-8);
}

TEST(PtLoss, DecreasesAsTargetLogitGrows) {
  Matrix z = Matrix::Zero(1, 5);
  const std::vector<int> t{2};
  const std::vector<std::size_t> p{0};
  double prev = pt_loss(z, t, p);
  for (int i = 1; i <= 30; ++i) {
    z(0, 2) = i;
    const double cur = pt_loss(z, t, p);
    EXPECT_LT(cur, prev);
    prev = cur;
  }
  EXPECT_LT(prev, 1e-12);
}

TEST(PtLoss, RandomAgainstOracleAndFiniteDifferences) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix z = random_logits(rng, 4, 9);
    std::vector<int> t;
    for (int i = 0; i < 4; ++i) t.push_back(static_cast<int>(rng.uniform_index(9)));
    const std::vector<std::size_t> p{0, 2, 3};
    const auto lg = pt_loss_with_grad(z, t, p);
    long double ref = 0.0L;
    for (auto i : p) ref += ce_oracle(z, static_cast<Eigen::Index>(i), t[i]);
    EXPECT_NEAR(lg.value, static_cast<double>(ref / 3.0L), 1e-10);
    EXPECT_EQ(lg.grad.row(1).norm(), 0.0);
    for (Eigen::Index k = 0; k < z.size(); ++k) {
      Matrix zp = z, zm = z;
      zp.data()[k] += 1e-6;
      zm.data()[k] -= 1e-6;
      EXPECT_NEAR(lg.grad.data()[k], (pt_loss(zp, t, p) - pt_loss(zm, t, p)) / 2e-6, 1e-7);
    }
  }
}

TEST(PtLoss, Errors) {
  const Matrix z = Matrix::Zero(2, 3);
  const std::vector<int> t{0, 1};
  try {
    pt_loss(z, t, std::vector<std::size_t>{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::EmptyPositionSet);
  }
  const std::vector<int> bad{0, 3};
  try {
    pt_loss(z, bad, std::vector<std::size_t>{1});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::IdOutOfRange);
  }
}

TEST(KdMask, FollowsRoles) {
  PromptInstance inst;
  inst.roles = {Role::ContentO, Role::ContentO, Role::ContentO, Role::ContentCurrentEntity, Role::ContentO};
  EXPECT_EQ(kd_position_mask(inst).keep, (std::vector<bool>{true, true, true, false, true}));
  inst.roles.insert(inst.roles.end(), {Role::TemplateAnchorSlot, Role::TemplateFiller, Role::TemplateFiller,
                                       Role::TemplateAnchorSlot, Role::TemplateFiller});
  const auto m = kd_position_mask(inst);
  for (std::size_t i = 5; i < 10; ++i) EXPECT_TRUE(m[i]);
  inst.roles.assign(3, Role::ContentCurrentEntity);
  EXPECT_EQ(kd_position_mask(inst).count(), 0u);
}

TEST(KdLoss, ClosedFormExample) {
  Matrix teacher(1, 2);
  teacher << std::log(0.75), std::log(0.25);
  const Matrix student = Matrix::Zero(1, 2);
  const double expect = 0.75 * std::log(1.5) + 0.25 * std::log(0.5);
  EXPECT_NEAR(kd_loss(student, teacher, all_true(1), 2), expect, 1e-12);
  EXPECT_NEAR(expect, 0.13082, 1e-5);
}

TEST(KdLoss, IdentityEmptyMaskAndExtraStudentColumns) {
  Rng rng(4);
  const Matrix z = random_logits(rng, 3, 6);
  EXPECT_LT(std::abs(kd_loss(z, z, all_true(3), 6)), 1e-12);
  EXPECT_EQ(kd_loss(z, z, KdMask{{false, false, false}}, 6), 0.0);
  // anchor columns the teacher never saw do not affect the loss
  Matrix wide(3, 8);
  wide.leftCols(6) = z;
  wide.rightCols(2) = random_logits(rng, 3, 2, 10.0);
  const auto lg = kd_loss_with_grad(wide, z, all_true(3), 6);
  EXPECT_LT(std::abs(lg.value), 1e-12);
  EXPECT_EQ(lg.grad.rightCols(2).norm(), 0.0);
}

TEST(KdLoss, RandomAgainstOracleAndFiniteDifferences) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix teacher = random_logits(rng, 5, 6);
    const Matrix student = random_logits(rng, 5, 8);
    const KdMask mask{{true, false, true, true, false}};
    const auto lg = kd_loss_with_grad(student, teacher, mask, 6);
    double ref = 0.0;
    for (Eigen::Index j : {0, 2, 3}) {
      const RowVector p = softmax(teacher.row(j));
      const RowVector q = softmax(student.row(j).head(6));
      for (Eigen::Index m = 0; m < 6; ++m) ref += p(m) * std::log(p(m) / q(m));
    }
    EXPECT_NEAR(lg.value, ref / 3.0, 1e-10);
    EXPECT_GE(lg.value, -1e-12);
    for (Eigen::Index k = 0; k < student.size(); ++k) {
      Matrix sp = student, sm = student;
      sp.data()[k] += 1e-6;
      sm.data()[k] -= 1e-6;
      EXPECT_NEAR(lg.grad.data()[k], (kd_loss(sp, teacher, mask, 6) - kd_loss(sm, teacher, mask, 6)) / 2e-6, 1e-7);
    }
  }
}

TEST(KdLoss, SupportMismatch) {
  const Matrix t = Matrix::Zero(2, 4), s = Matrix::Zero(2, 3);
  try {
    kd_loss(s, t, all_true(2), 4);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::SupportMismatch);
  }
  EXPECT_THROW(kd_loss(Matrix::Zero(2, 5), t, all_true(2), 3), Error);
  EXPECT_THROW(kd_loss(Matrix::Zero(2, 5), t, all_true(3), 4), Error);
}

TEST(TotalLoss, WeightsAndValidation) {
  EXPECT_DOUBLE_EQ(total_loss(0.7, 1.3, LossConfig{0.0, 1.0}), 1.3);
  EXPECT_DOUBLE_EQ(total_loss(0.7, 1.3, LossConfig{}), 2.0);
  EXPECT_DOUBLE_EQ(total_loss(0.5, 2.0, LossConfig{2.0, 0.5}), 2.0);
  EXPECT_THROW(total_loss(NAN, 1.0, LossConfig{}), Error);
  EXPECT_THROW(total_loss(1.0, INFINITY, LossConfig{}), Error);
  EXPECT_THROW((LossConfig{0.0, 0.0}.validate()), Error);
  EXPECT_THROW((LossConfig{-1.0, 1.0}.validate()), Error);
}
