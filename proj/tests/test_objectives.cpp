#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "c4v/objectives.hpp"
#include "c4v/ops.hpp"

using namespace c4v;

namespace {

using Rows = std::vector<std::vector<double>>;

Rows random_unit_rows(std::size_t n, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Rows r(n, std::vector<double>(d));
  for (auto& row : r) {
    double s = 0.0;
    for (auto& x : row) {
      x = g(rng);
      s += x * x;
    }
    for (auto& x : row) x /= std::sqrt(s);
  }
  return r;
}

Tensor to_tensor(const Rows& r) {
  std::vector<double> v;
  for (const auto& row : r) v.insert(v.end(), row.begin(), row.end());
  return Tensor({r.size(), r[0].size()}, std::move(v));
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// -log softmax of `positive` among `terms` (positive included).
double nll(double positive, const std::vector<double>& terms) {
  double z = 0.0;
  for (double t : terms) z += std::exp(t);
  return std::log(z) - positive;
}

double inter_oracle(const Rows& z, const Rows& x, double s) {
  const auto b = z.size();
  double rows = 0.0, cols = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    std::vector<double> r, c;
    for (std::size_t j = 0; j < b; ++j) {
      r.push_back(s * dot(z[i], x[j]));
      c.push_back(s * dot(z[j], x[i]));
    }
    rows += nll(s * dot(z[i], x[i]), r);
    cols += nll(s * dot(z[i], x[i]), c);
  }
  return 0.5 * (rows + cols) / b;
}

// Anchor a_i: positive o_i, negatives o_j (j != i) and a_k (k != i).
double intra_anchored_oracle(const Rows& a, const Rows& o, double s) {
  const auto b = a.size();
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    std::vector<double> terms;
    for (std::size_t j = 0; j < b; ++j) terms.push_back(s * dot(a[i], o[j]));
    for (std::size_t k = 0; k < b; ++k)
      if (k != i) terms.push_back(s * dot(a[i], a[k]));
    total += nll(s * dot(a[i], o[i]), terms);
  }
  return total / b;
}

Tensor scale_tensor(double s) { return Tensor::scalar(s); }

} // namespace

TEST(InterModalNce, IdenticalEmbeddingsGiveLogB) {
  for (std::size_t b : {2u, 4u, 8u}) {
    const Rows same(b, random_unit_rows(1, 5, b)[0]);
    const auto t = to_tensor(same);
    EXPECT_NEAR(inter_modal_nce(t, t, scale_tensor(1.0)).item(), std::log(static_cast<double>(b)), 1e-9) << b;
  }
}

TEST(InterModalNce, SingleItemIsZero) {
  const auto t = to_tensor(random_unit_rows(1, 4, 1));
  EXPECT_NEAR(inter_modal_nce(t, t, scale_tensor(1.0)).item(), 0.0, 1e-15);
}

TEST(InterModalNce, OrthonormalPairsAtLargeScaleVanish) {
  Rows eye(4, std::vector<double>(4, 0.0));
  for (std::size_t i = 0; i < 4; ++i) eye[i][i] = 1.0;
  const auto t = to_tensor(eye);
  EXPECT_LT(inter_modal_nce(t, t, scale_tensor(100.0)).item(), 1e-3);
}

TEST(InterModalNce, MatchesLoopOracle) {
  const auto z = random_unit_rows(6, 5, 2), x = random_unit_rows(6, 5, 3);
  EXPECT_NEAR(inter_modal_nce(to_tensor(z), to_tensor(x), scale_tensor(3.5)).item(), inter_oracle(z, x, 3.5), 1e-12);
}

TEST(InterModalNce, NonUnitRowsThrow) {
  auto z = random_unit_rows(3, 4, 4);
  z[1][0] += 1e-3;
  const auto x = to_tensor(random_unit_rows(3, 4, 5));
  EXPECT_THROW(inter_modal_nce(to_tensor(z), x, scale_tensor(1.0)), std::invalid_argument);
}

TEST(IntraModalNce, AllIdenticalPairIsLogThree) {
  const Rows same(2, random_unit_rows(1, 6, 6)[0]);
  const auto t = to_tensor(same);
  EXPECT_NEAR(intra_modal_nce(t, t, scale_tensor(1.0)).item(), std::log(3.0), 1e-9);
  EXPECT_NEAR(intra_modal_nce(t, t, scale_tensor(1.0), false).item(), std::log(3.0), 1e-9);
}

TEST(IntraModalNce, OrthogonalCleanEqualsMaskedHandValue) {
  const auto t = to_tensor({{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}});
  EXPECT_NEAR(intra_modal_nce(t, t, scale_tensor(1.0)).item(), std::log(std::numbers::e + 2.0) - 1.0, 1e-12);
}

TEST(IntraModalNce, DenominatorHasTwoBMinusOneTerms) {
  for (std::size_t b : {2u, 3u, 8u}) {
    const auto mask = intra_modal_logit_mask(b);
    ASSERT_EQ(mask.size(), b * 2 * b);
    for (std::size_t i = 0; i < b; ++i) {
      std::size_t terms = 0;
      for (std::size_t c = 0; c < 2 * b; ++c) terms += mask[i * 2 * b + c];
      EXPECT_EQ(terms, 2 * b - 1);
      EXPECT_EQ(mask[i * 2 * b + i], 1) << "positive must be admitted";
      EXPECT_EQ(mask[i * 2 * b + b + i], 0) << "self-similarity must be excluded";
    }
  }
}

TEST(IntraModalNce, MatchesLoopOracleBothForms) {
  const auto z = random_unit_rows(5, 4, 7), zh = random_unit_rows(5, 4, 8);
  const double s = 2.0;
  const auto oneway = intra_anchored_oracle(z, zh, s);
  const auto sym = 0.5 * (oneway + intra_anchored_oracle(zh, z, s));
  EXPECT_NEAR(intra_modal_nce(to_tensor(z), to_tensor(zh), scale_tensor(s), false).item(), oneway, 1e-12);
  EXPECT_NEAR(intra_modal_nce(to_tensor(z), to_tensor(zh), scale_tensor(s)).item(), sym, 1e-12);
}

TEST(IntraModalNce, BatchOfOneThrows) {
  const auto t = to_tensor(random_unit_rows(1, 4, 9));
  EXPECT_THROW(intra_modal_nce(t, t, scale_tensor(1.0)), std::invalid_argument);
}

TEST(SymmetricScoreNce, EqualsInterModalOnCosines) {
  const auto z = random_unit_rows(4, 3, 10), x = random_unit_rows(4, 3, 11);
  const auto logits = scale(matmul_nt(to_tensor(z), to_tensor(x)), 2.5);
  EXPECT_NEAR(symmetric_score_nce(logits).item(), inter_oracle(z, x, 2.5), 1e-12);
  EXPECT_THROW(symmetric_score_nce(Tensor({2, 3}, std::vector<double>(6, 0.0))), std::invalid_argument);
}

TEST(PretrainLoss, TotalIsTheSumAndPermutationInvariant) {
  const auto t = random_unit_rows(4, 5, 12), v = random_unit_rows(4, 5, 13), a = random_unit_rows(4, 5, 14),
             m = random_unit_rows(4, 5, 15);
  const auto s = scale_tensor(1.7);
  const auto bundle = total_pretrain_loss(to_tensor(t), to_tensor(v), to_tensor(a), to_tensor(m), s);
  EXPECT_NEAR(bundle.total.item(), bundle.nce_at.item() + bundle.nce_av.item() + bundle.nce_a_hat.item(), 1e-12);
  EXPECT_NEAR(bundle.nce_at.item(), inter_oracle(a, t, 1.7), 1e-12);

  const std::vector<std::size_t> perm{2, 0, 3, 1};
  auto permute = [&](const Rows& r) {
    Rows out;
    for (auto i : perm) out.push_back(r[i]);
    return to_tensor(out);
  };
  const auto p = total_pretrain_loss(permute(t), permute(v), permute(a), permute(m), s);
  EXPECT_NEAR(p.nce_at.item(), bundle.nce_at.item(), 1e-10);
  EXPECT_NEAR(p.nce_av.item(), bundle.nce_av.item(), 1e-10);
  EXPECT_NEAR(p.nce_a_hat.item(), bundle.nce_a_hat.item(), 1e-10);
  EXPECT_NEAR(p.total.item(), bundle.total.item(), 1e-10);
}

TEST(PretrainLoss, BatchMismatchThrows) {
  const auto a = to_tensor(random_unit_rows(3, 4, 16)), b = to_tensor(random_unit_rows(2, 4, 17));
  EXPECT_THROW(total_pretrain_loss(a, a, a, b, scale_tensor(1.0)), std::invalid_argument);
}

TEST(PretrainLoss, BoundedAtStepZeroForRandomEmbeddings) {
  // With scale 1 every logit lies in [-1, 1], so each softmax term is within
  // [ln B - 2, ln B + 2] (inter) and [ln(2B-1) - 2, ln(2B-1) + 2] (intra).
  const std::size_t b = 8;
  const auto t = to_tensor(random_unit_rows(b, 6, 18));
  const auto bundle = total_pretrain_loss(t, to_tensor(random_unit_rows(b, 6, 19)), to_tensor(random_unit_rows(b, 6, 20)),
                                          to_tensor(random_unit_rows(b, 6, 21)), scale_tensor(1.0));
  EXPECT_GE(bundle.nce_at.item(), std::log(8.0) - 2.0);
  EXPECT_LE(bundle.nce_at.item(), std::log(8.0) + 2.0);
  EXPECT_GE(bundle.nce_a_hat.item(), std::log(15.0) - 2.0);
  EXPECT_LE(bundle.nce_a_hat.item(), std::log(15.0) + 2.0);
}

TEST(LogitScale, FixedAndLearnableValues) {
  EXPECT_EQ(LogitScale::fixed(2.5).value().item(), 2.5);
  EXPECT_FALSE(LogitScale::fixed().is_learnable());
  ParamStore store;
  const auto s = LogitScale::learnable(store);
  EXPECT_TRUE(s.is_learnable());
  EXPECT_NEAR(s.value().item(), 1.0 / 0.07, 1e-12);
  store.entry("logit_scale").value.mutable_values()[0] = 10.0;
  EXPECT_NEAR(s.value().item(), 100.0, 1e-9);
}
