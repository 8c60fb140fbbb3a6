#include <gtest/gtest.h>

#include <cmath>

#include "fsclner/model.hpp"
#include "fsclner/objectives.hpp"
#include "fsclner/optim.hpp"

using namespace fsclner;

namespace {

ModelConfig small(int d = 16, std::uint64_t seed = 1) {
  ModelConfig c;
  c.d_model = d;
  c.n_heads = 2;
  c.seed = seed;
  return c;
}

std::vector<std::vector<double>> rows(int n, int d, double v) {
  return std::vector<std::vector<double>>(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(d), v));
}

// one scalar parameter, for optimizer checks
struct Scalar {
  Param p;
  Scalar(double v) {
    p.init("p", 1, 1);
    p.value(0, 0) = v;
  }
  template <typename F>
  void visit_params(F&& f) {
    f(p);
  }
};

}  // namespace

TEST(Model, LogitShapeCoversAnchors) {
  TinyRefModel m(small(64), 100);
  m.extend_vocab(rows(4, 64, 0.01));
  const std::vector<int> ids{3, 5, 7, 9, 11, 13, 101};
  const Matrix z = m.forward(ids);
  EXPECT_EQ(z.rows(), 7);
  EXPECT_EQ(z.cols(), 104);
  for (Eigen::Index j = 0; j < z.rows(); ++j) EXPECT_NEAR(softmax(z.row(j)).sum(), 1.0, 1e-12);
}

TEST(Model, TiedHeadEqualsHiddenTimesEmbedding) {
  TinyRefModel m(small(), 40);
  m.extend_vocab(rows(2, 16, 0.2));
  const std::vector<int> ids{1, 4, 9, 40, 41};
  const Matrix h = m.encode(ids);
  const Matrix direct = h * m.embedding().transpose();
  EXPECT_LT((direct - m.forward(ids)).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Model, ForwardIsPureAndCounted) {
  TinyRefModel m(small(), 30);
  const std::vector<int> ids{2, 3, 4};
  const auto before = m.forward_calls();
  const Matrix a = m.forward(ids);
  const Matrix b = m.forward(ids);
  EXPECT_EQ(a, b);
  EXPECT_EQ(m.forward_calls() - before, 2u);
  EXPECT_EQ(m.forward_train(ids).logits, a);
}

TEST(Model, ContextSensitive) {
  TinyRefModel m(small(), 30);
  const Matrix a = m.forward(std::vector<int>{2, 3, 4});
  const Matrix b = m.forward(std::vector<int>{2, 3, 5});
  EXPECT_GT((a.row(0) - b.row(0)).cwiseAbs().maxCoeff(), 0.0);
  // same token at different positions gets different logits
  const Matrix c = m.forward(std::vector<int>{7, 7});
  EXPECT_GT((c.row(0) - c.row(1)).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Model, BadIdsAndConfig) {
  TinyRefModel m(small(), 30);
  try {
    m.forward(std::vector<int>{30});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::IdOutOfRange);
  }
  ModelConfig bad = small();
  bad.n_heads = 3;
  EXPECT_THROW(TinyRefModel(bad, 10), Error);
}

TEST(Model, SameSeedSameParameters) {
  EXPECT_EQ(TinyRefModel(small(16, 5), 20).param_hash(), TinyRefModel(small(16, 5), 20).param_hash());
  EXPECT_NE(TinyRefModel(small(16, 5), 20).param_hash(), TinyRefModel(small(16, 6), 20).param_hash());
}

TEST(ExtendVocab, OldLogitsBitIdenticalAndProbabilitiesShrink) {
  TinyRefModel m(small(), 50);
  const std::vector<int> ids{5, 6, 7, 8};
  const Matrix before = m.forward(ids);
  m.extend_vocab(rows(1, 16, 0.3));
  const Matrix after = m.forward(ids);
  ASSERT_EQ(after.cols(), before.cols() + 1);
  EXPECT_EQ(m.vocab_size(), 51u);
  EXPECT_EQ(m.output_size(), 51u);
  for (Eigen::Index j = 0; j < before.rows(); ++j) {
    for (Eigen::Index k = 0; k < before.cols(); ++k) EXPECT_EQ(before(j, k), after(j, k));
    const RowVector p0 = softmax(before.row(j)), p1 = softmax(after.row(j));
    for (Eigen::Index k = 0; k < before.cols(); ++k) EXPECT_LE(p1(k), p0(k));
  }
  EXPECT_EQ(m.head_bias()(0, 50), 0.0);
  EXPECT_EQ(m.embedding_row(50), std::vector<double>(16, 0.3));
}

TEST(ExtendVocab, UntiedInitializesBothTables) {
  ModelConfig c = small();
  c.tie_weights = false;
  TinyRefModel m(c, 20);
  m.extend_vocab(rows(2, 16, -0.5));
  EXPECT_EQ(m.head_weight().rows(), 22);
  for (Eigen::Index k = 0; k < 16; ++k) {
    EXPECT_EQ(m.head_weight()(21, k), -0.5);
    EXPECT_EQ(m.embedding()(21, k), -0.5);
  }
}

TEST(ExtendVocab, DimensionMismatch) {
  TinyRefModel m(small(), 20);
  try {
    m.extend_vocab(rows(1, 15, 0.0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::DimensionMismatch);
  }
  EXPECT_EQ(m.vocab_size(), 20u);
}

TEST(Classifier, OutputIsSeenTypesPlusO) {
  ModelConfig c = small();
  c.head_mode = HeadMode::Classifier;
  TinyRefModel m(c, 30);
  m.extend_vocab(rows(2, 16, 0.1));
  m.extend_classes(3);
  EXPECT_EQ(m.forward(std::vector<int>{1, 2}).cols(), 3);
  m.extend_vocab(rows(1, 16, 0.1));
  m.extend_classes(1);
  EXPECT_EQ(m.output_size(), 4u);
  EXPECT_EQ(m.vocab_size(), 33u);
}

TEST(Freeze, AllLayersFrozenLeavesBlocksUntouched) {
  TinyRefModel m(small(), 20);
  m.freeze_lower(2);
  std::vector<Matrix> before;
  m.visit_params([&](const Param& p) {
    if (p.name.starts_with("block")) before.push_back(p.value);
  });
  const std::vector<int> ids{2, 3, 4, 5};
  const auto cache = m.forward_train(ids);
  const std::vector<std::size_t> pos{0, 1, 2, 3};
  m.zero_grad();
  const auto lg = pt_loss_with_grad(cache.logits, std::vector<int>{3, 4, 5, 6}, pos);
  m.backward(cache, lg.grad);
  Adam opt;
  grad_step(m, lg.value, opt, 1e-2);
  std::size_t i = 0;
  bool some_grad = false;
  m.visit_params([&](const Param& p) {
    if (!p.name.starts_with("block")) return;
    EXPECT_EQ(p.value, before[i++]) << p.name;
    some_grad = some_grad || p.grad.norm() > 0.0;
  });
  EXPECT_TRUE(some_grad);  // gradients still accumulate on frozen tensors
  EXPECT_EQ(m.frozen_layers(), 2);
}

TEST(Freeze, RangeAndFlags) {
  TinyRefModel m(small(), 20);
  m.freeze_lower(0);
  m.visit_params([](const Param& p) { EXPECT_TRUE(p.trainable) << p.name; });
  m.freeze_lower(1);
  m.visit_params([](const Param& p) {
    if (p.name.starts_with("block0.")) EXPECT_FALSE(p.trainable);
    else EXPECT_TRUE(p.trainable) << p.name;
  });
  try {
    m.freeze_lower(3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::LayerIndexOutOfRange);
  }
  EXPECT_THROW(m.freeze_lower(-1), Error);
}

TEST(Snapshot, TeacherUnaffectedByStudentUpdates) {
  TinyRefModel m(small(), 25);
  const auto teacher = snapshot(m);
  const auto teacher2 = snapshot(teacher.model());
  const std::vector<int> ids{3, 4, 5};
  const Matrix t0 = teacher.forward(ids);
  const auto hash = teacher.param_hash();
  m.extend_vocab(rows(1, 16, 0.0));
  const auto cache = m.forward_train(ids);
  m.zero_grad();
  m.backward(cache, pt_loss_with_grad(cache.logits, std::vector<int>{25, 25, 25}, all_positions(3)).grad);
  Adam opt;
  opt.step(m, 1e-2);
  EXPECT_NE(m.param_hash(), hash);
  EXPECT_EQ(teacher.forward(ids), t0);
  EXPECT_EQ(teacher2.forward(ids), t0);
  EXPECT_EQ(teacher.param_hash(), hash);
  EXPECT_EQ(teacher.support(), 25u);
}

TEST(Adam, DescendsOnSquare) {
  Scalar s(1.0);
  Adam opt;
  double prev = 1.0;
  for (int i = 0; i < 50; ++i) {
    s.p.grad(0, 0) = 2.0 * s.p.value(0, 0);
    grad_step(s, s.p.value(0, 0) * s.p.value(0, 0), opt, 1e-2);
    EXPECT_LT(std::abs(s.p.value(0, 0)), std::abs(prev));
    prev = s.p.value(0, 0);
  }
  EXPECT_EQ(opt.steps(), 50);
}

TEST(Adam, NonFiniteLossAndDeterminism) {
  Scalar s(1.0);
  Adam opt;
  try {
    grad_step(s, NAN, opt, 1e-2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::NonFiniteLoss);
  }
  EXPECT_EQ(s.p.value(0, 0), 1.0);
  Scalar a(0.3), b(0.3);
  Adam oa, ob;
  for (int i = 0; i < 10; ++i) {
    a.p.grad(0, 0) = std::sin(a.p.value(0, 0));
    b.p.grad(0, 0) = std::sin(b.p.value(0, 0));
    oa.step(a, 0.1);
    ob.step(b, 0.1);
  }
  EXPECT_EQ(a.p.value, b.p.value);
}

TEST(Gradient, SampledEntriesMatchFiniteDifferences) {
  // one old anchor (id 30) known to the teacher, one new anchor (id 31)
  TinyRefModel m(small(16, 3), 30);
  m.extend_vocab(rows(1, 16, -0.05));
  const auto teacher = snapshot(m);
  m.extend_vocab(rows(1, 16, 0.05));
  PromptInstance inst;
  inst.input_ids = {4, 9, 7, 12, 30, 5};
  inst.target_ids = {4, 31, 30, 12, 30, 5};
  inst.roles = {Role::ContentO, Role::ContentCurrentEntity, Role::TemplateAnchorSlot, Role::TemplateFiller,
                Role::TemplateAnchorSlot, Role::TemplateFiller};
  const KdMask mask = kd_position_mask(inst);
  const Matrix tlog = teacher.forward(inst.input_ids);
  const auto pos = all_positions(inst.size());
  auto loss = [&] {
    const Matrix z = m.forward(inst.input_ids);
    return kd_loss(z, tlog, mask, 31) + pt_loss(z, inst.target_ids, pos);
  };
  const auto cache = m.forward_train(inst.input_ids);
  m.zero_grad();
  Matrix g = pt_loss_with_grad(cache.logits, inst.target_ids, pos).grad;
  g += kd_loss_with_grad(cache.logits, tlog, mask, 31).grad;
  m.backward(cache, g);

  std::vector<Param*> params;
  m.visit_params([&](Param& p) { params.push_back(&p); });
  Rng rng(0);
  for (Param* p : params) {
    if (p->value.size() == 0) continue;
    for (int s = 0; s < 6; ++s) {
      const auto k = static_cast<Eigen::Index>(rng.uniform_index(static_cast<std::size_t>(p->value.size())));
      const double orig = p->value.data()[k];
      p->value.data()[k] = orig + 1e-5;
      const double up = loss();
      p->value.data()[k] = orig - 1e-5;
      const double dn = loss();
      p->value.data()[k] = orig;
      const double num = (up - dn) / 2e-5;
      const double ana = p->grad.data()[k];
      EXPECT_LT(std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), 1e-6}), 1e-4) << p->name << "[" << k << "]";
    }
  }
}
