#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "pcdm/denoiser.hpp"
#include "pcdm/errors.hpp"
#include "test_util.hpp"

using namespace pcdm;
using pcdm::testing::numeric_grad;
using pcdm::testing::random_tensor;
using pcdm::testing::rel_err;

namespace {

DenoiserConfig small_config(int64_t h = 8, int64_t w = 8, int depth = 2, int64_t width = 8) {
  DenoiserConfig c;
  c.height = h;
  c.width = w;
  c.depth = depth;
  c.base_width = width;
  c.zero_init_output = false;
  return c;
}

void zero_block(DenoiserModel& m, const std::string& prefix) {
  for (size_t i = 0; i < m.parameters().size(); ++i) {
    if (m.parameters().names()[i].rfind(prefix, 0) == 0) m.parameters().vars()[i].mutable_value().fill(0.0);
  }
}

Var random_var(const Shape& s, Rng& rng) { return Var::constant(random_tensor(s, rng)); }

bool is_dead_cab_parameter(const std::string& name) {
  for (const char* blk : {"mid.cab_t.", "mid.cab_d."}) {
    for (const char* part : {"q.", "k.", "gn."}) {
      if (name.rfind(std::string(blk) + part, 0) == 0) return true;
    }
  }
  return false;
}

}  // namespace

TEST(Sinusoidal, ZeroIsCosOnesSinZeros) {
  const Tensor e = sinusoidal_encode(0.0, 32);
  for (int i = 0; i < 16; ++i) {
    EXPECT_EQ(e[i], 1.0);
    EXPECT_EQ(e[16 + i], 0.0);
  }
}

TEST(Sinusoidal, FirstFrequencyIsOneAndRangeIsBounded) {
  for (double v : {0.3, 7.0, 1999.0, -42.5}) {
    const Tensor e = sinusoidal_encode(v, 32);
    EXPECT_DOUBLE_EQ(e[0], std::cos(v));
    EXPECT_DOUBLE_EQ(e[16], std::sin(v));
    EXPECT_DOUBLE_EQ(e[1], std::cos(v * std::pow(10000.0, -1.0 / 16.0)));
    for (double x : e.data()) EXPECT_LE(std::abs(x), 1.0);
  }
  EXPECT_THROW(sinusoidal_encode(1.0, 31), ConfigError);
}

TEST(Embedding, DimensionsAndDeterminism) {
  const DenoiserModel m(small_config(), 1);
  const ConditionEmbedding a = m.embed_conditions(17, 1.5);
  EXPECT_EQ(a.en_t.value().numel(), 32);
  EXPECT_EQ(a.en_d.value().numel(), 32);
  EXPECT_EQ(a.e_t.value().numel(), 96);
  EXPECT_EQ(a.e_d.value().numel(), 32);
  EXPECT_EQ(a.e.value().numel(), 128);
  for (int i = 0; i < 96; ++i) EXPECT_EQ(a.e.value()[i], a.e_t.value()[i]);
  for (int i = 0; i < 32; ++i) EXPECT_EQ(a.e.value()[96 + i], a.e_d.value()[i]);
  EXPECT_EQ(a.e.value(), m.embed_conditions(17, 1.5).e.value());
}

TEST(Embedding, AdjacentTimestepsDiffer) {
  for (uint64_t seed = 0; seed < 100; ++seed) {
    const DenoiserModel m(small_config(2, 2, 1, 8), seed);
    EXPECT_FALSE(m.embed_conditions(1, 1.0).e.value() == m.embed_conditions(2, 1.0).e.value()) << seed;
  }
}

TEST(ResBlock, ZeroWeightsGivePureSkip) {
  DenoiserModel m(small_config(), 2);
  zero_block(m, "enc0.rb.");
  Rng rng(3);
  const Var x = random_var({8, 8, 8}, rng);
  const Var e = random_var({128}, rng);
  EXPECT_EQ(m.res_block(x, e, "enc0.rb").value(), x.value());
}

TEST(ResBlock, EmbeddingPathBroadcastsOverSpace) {
  DenoiserModel m(small_config(), 4);
  Rng rng(5);
  const Var x = random_var({8, 8, 8}, rng);
  const Var e = random_var({128}, rng);
  const Tensor before = m.res_block(x, e, "enc0.rb").value();
  Var& w = m.parameters().get("enc0.rb.emb.w");
  w.mutable_value() = random_tensor(w.shape(), rng);
  const Tensor delta = m.res_block(x, e, "enc0.rb").value() - before;
  for (int c = 0; c < 8; ++c) {
    for (int i = 0; i < 64; ++i) EXPECT_NEAR(delta[c * 64 + i], delta[c * 64], 1e-12);
  }
}

TEST(ResBlock, HandComputedSingleChannel) {
  DenoiserModel m(small_config(2, 2, 1, 1), 6);
  zero_block(m, "enc0.rb.");
  m.parameters().get("enc0.rb.gn.gamma").mutable_value().fill(1.0);
  m.parameters().get("enc0.rb.conv.w").mutable_value()[4] = 2.0;  // centre tap
  m.parameters().get("enc0.rb.conv.b").mutable_value()[0] = 0.5;
  m.parameters().get("enc0.rb.emb.w").mutable_value()[0] = 1.0;
  Tensor e({128});
  e[0] = 1.0;
  const Var x = Var::constant(Tensor({1, 2, 2}, std::vector<double>{1, 2, 3, 4}));
  const Tensor out = m.res_block(x, Var::constant(e), "enc0.rb").value();
  const double expected[] = {1.674974194481782, 2.8822120033279557, 4.776635616640574, 7.358245034419636};
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(out[i], expected[i], 1e-12);
}

TEST(ResBlock, WrongEmbeddingLength) {
  const DenoiserModel m(small_config(), 7);
  EXPECT_THROW(m.res_block(Var::constant(Tensor({8, 8, 8})), Var::constant(Tensor({96})), "enc0.rb"),
               DimensionError);
}

TEST(Sab, ShapeAndZeroProjection) {
  DenoiserModel m(small_config(), 8);
  Rng rng(9);
  const Var x = random_var({16, 4, 4}, rng);
  EXPECT_EQ(m.sab(x, "mid.sab").shape(), x.shape());
  for (const char* p : {"mid.sab.q.", "mid.sab.k.", "mid.sab.v.", "mid.sab.out."}) zero_block(m, p);
  EXPECT_EQ(m.sab(x, "mid.sab").value(), x.value());
}

TEST(Sab, SingleTokenReducesToValue) {
  DenoiserModel m(small_config(), 10);
  Rng rng(11);
  const int64_t c = 16;
  const Tensor beta = random_tensor({c}, rng);
  m.parameters().get("mid.sab.gn.beta").mutable_value() = beta;
  const Var x = random_var({c, 1, 1}, rng);
  const Tensor out = m.sab(x, "mid.sab").value();
  // 8 groups of 2 channels with one pixel each: GN leaves only beta (the two
  // channels of a group normalise against each other).
  const Tensor gn = ops::group_norm(x, 8, m.parameters().get("mid.sab.gn.gamma"), Var::constant(beta)).value();
  const Tensor& wv = m.parameters().get("mid.sab.v.w").value();
  const Tensor& bv = m.parameters().get("mid.sab.v.b").value();
  const Tensor& wo = m.parameters().get("mid.sab.out.w").value();
  const Tensor& bo = m.parameters().get("mid.sab.out.b").value();
  std::vector<double> v(c);
  for (int64_t i = 0; i < c; ++i) {
    v[i] = bv[i];
    for (int64_t j = 0; j < c; ++j) v[i] += wv[i * c + j] * gn[j];
  }
  for (int64_t i = 0; i < c; ++i) {
    double o = bo[i] + x.value()[i];
    for (int64_t j = 0; j < c; ++j) o += wo[i * c + j] * v[j];
    EXPECT_NEAR(out[i], o, 1e-12);
  }
}

TEST(Attention, RowsAreProbabilityVectors) {
  Rng rng(12);
  const Var q = random_var({6, 10}, rng), k = random_var({6, 7}, rng);
  const Tensor w = ops::softmax(ops::scale(ops::matmul(ops::transpose(q), k), 1.0 / std::sqrt(6.0)), 1).value();
  for (int r = 0; r < 10; ++r) {
    double s = 0;
    for (int c = 0; c < 7; ++c) s += w[r * 7 + c];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  EXPECT_EQ(attention(q, k, random_var({6, 7}, rng)).shape(), (Shape{6, 10}));
}

TEST(Cab, BroadcastLaw) {
  const DenoiserModel m(small_config(), 13);
  Rng rng(14);
  const Var o_s = random_var({16, 4, 4}, rng);
  for (const auto& [id, len] : {std::pair{"mid.cab_t", 96}, std::pair{"mid.cab_d", 32}}) {
    const Tensor att = m.cab_attention(o_s, random_var({len}, rng), id).value();
    for (int c = 0; c < 16; ++c) {
      for (int i = 1; i < 16; ++i) EXPECT_EQ(att[c * 16 + i], att[c * 16]);
    }
    EXPECT_EQ(m.cab(o_s, random_var({len}, rng), id).shape(), o_s.shape());
  }
}

TEST(Cab, ZeroValueGivesBiasMap) {
  DenoiserModel m(small_config(), 15);
  zero_block(m, "mid.cab_t.v.");
  Rng rng(16);
  const Tensor out = m.cab(random_var({16, 4, 4}, rng), random_var({96}, rng), "mid.cab_t").value();
  const Tensor& b = m.parameters().get("mid.cab_t.out.b").value();
  for (int c = 0; c < 16; ++c) {
    for (int i = 0; i < 16; ++i) EXPECT_EQ(out[c * 16 + i], b[c]);
  }
}

TEST(Cab, HandSizedBroadcast) {
  // Bottleneck of width 2 with a 1x2 map: C = 2, HW = 2.
  const DenoiserModel m(small_config(1, 2, 1, 2), 17);
  Rng rng(18);
  const Var e = random_var({32}, rng);
  const Tensor att = m.cab_attention(random_var({2, 1, 2}, rng), e, "mid.cab_d").value();
  const Tensor& wv = m.parameters().get("mid.cab_d.v.w").value();
  const Tensor& bv = m.parameters().get("mid.cab_d.v.b").value();
  for (int c = 0; c < 2; ++c) {
    double v = bv[c];
    for (int j = 0; j < 32; ++j) v += wv[c * 32 + j] * e.value()[j];
    EXPECT_NEAR(att[c * 2], v, 1e-12);
    EXPECT_NEAR(att[c * 2 + 1], v, 1e-12);
  }
}

TEST(Fusion, WeightCases) {
  Rng rng(19);
  const Var a = random_var({4, 2, 2}, rng), b = random_var({4, 2, 2}, rng), c = random_var({4, 2, 2}, rng);
  auto s = [](double v) { return Var::constant(Tensor::scalar(v)); };
  EXPECT_EQ(fuse_features(a, b, c, s(1), s(0), s(0)).value(), a.value());
  EXPECT_EQ(fuse_features(a, b, c, s(0), s(0), s(0)).value(), Tensor({4, 2, 2}));
  EXPECT_THROW(fuse_features(a, b, random_var({4, 2, 3}, rng), s(1), s(1), s(1)), DimensionError);
}

TEST(Fusion, WeightGradientIsInnerProduct) {
  DenoiserModel m(small_config(), 20);
  Rng rng(21);
  const Var o_s = random_var({16, 4, 4}, rng), o_ct = random_var({16, 4, 4}, rng), o_cd = random_var({16, 4, 4}, rng);
  const Var target = random_var({16, 4, 4}, rng);
  auto build = [&] { return ops::squared_error(m.pcab(o_s, o_ct, o_cd, "mid.pcab"), target); };
  m.parameters().zero_grad();
  backward(build());
  Var& w1 = m.parameters().get("mid.pcab.w1");
  auto value = [&] {
    NoGradGuard guard;
    return build().value().item();
  };
  EXPECT_LT(rel_err(w1.grad()[0], numeric_grad(w1, 0, value)), 1e-6);

  // Same quantity through an explicit dL/dM_Fuse.
  Var fused = Var::parameter(fuse_features(o_s, o_ct, o_cd, w1, m.parameters().get("mid.pcab.w2"),
                                           m.parameters().get("mid.pcab.w3"))
                                 .value());
  const Var tail = ops::squared_error(
      ops::conv2d(ops::silu(ops::group_norm(fused, 8, m.parameters().get("mid.pcab.gn.gamma"),
                                            m.parameters().get("mid.pcab.gn.beta"))),
                  m.parameters().get("mid.pcab.conv.w"), m.parameters().get("mid.pcab.conv.b"), 1, 1),
      target);
  backward(tail);
  double inner = 0;
  for (int64_t i = 0; i < fused.value().numel(); ++i) inner += fused.grad()[i] * o_s.value()[i];
  EXPECT_LT(rel_err(w1.grad()[0], inner), 1e-10);
}

TEST(Denoise, ShapeDeterminismAndResolutionCheck) {
  const DenoiserModel m(small_config(8, 16, 3, 8), 22);
  Rng rng(23);
  const Tensor x = random_tensor({1, 8, 16}, rng), y = random_tensor({1, 8, 16}, rng);
  const Tensor out = m.predict(x, 5, y, 2.5);
  EXPECT_EQ(out.shape(), (Shape{1, 8, 16}));
  EXPECT_EQ(out, m.predict(x, 5, y, 2.5));
  EXPECT_THROW(m.predict(Tensor({1, 8, 8}), 5, Tensor({1, 8, 8}), 2.5), DimensionError);
}

TEST(Denoise, ZeroInitialisedOutputPredictsZero) {
  DenoiserConfig c = small_config();
  c.zero_init_output = true;
  const DenoiserModel m(c, 24);
  Rng rng(25);
  EXPECT_EQ(m.predict(random_tensor({1, 8, 8}, rng), 3, random_tensor({1, 8, 8}, rng), 1.0), Tensor({1, 8, 8}));
}

TEST(Denoise, GradientMatchesFiniteDifferences) {
  DenoiserModel m(small_config(8, 8, 2, 8), 26);
  Rng rng(27);
  const Var x = random_var({1, 8, 8}, rng), y = random_var({1, 8, 8}, rng), target = random_var({1, 8, 8}, rng);
  auto build = [&] { return ops::squared_error(m.forward(x, 9, y, 1.5), target); };
  m.parameters().zero_grad();
  backward(build());
  auto value = [&] {
    NoGradGuard guard;
    return build().value().item();
  };
  int checked = 0;
  while (checked < 20) {
    const size_t pi = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(m.parameters().size()) - 1));
    if (is_dead_cab_parameter(m.parameters().names()[pi])) continue;
    Var& p = m.parameters().vars()[pi];
    const int64_t i = rng.uniform_int(0, p.value().numel() - 1);
    const double g = p.grad()[i];
    EXPECT_LT(rel_err(g, numeric_grad(p, i, value), 1e-7), 1e-5) << m.parameters().names()[pi] << "[" << i << "]";
    ++checked;
  }
}

TEST(Denoise, EveryLiveParameterReceivesGradient) {
  DenoiserModel m(small_config(8, 8, 2, 8), 28);
  Rng rng(29);
  m.parameters().zero_grad();
  backward(ops::squared_error(m.forward(random_var({1, 8, 8}, rng), 40, random_var({1, 8, 8}, rng), 2.5),
                              random_var({1, 8, 8}, rng)));
  for (size_t i = 0; i < m.parameters().size(); ++i) {
    const std::string& name = m.parameters().names()[i];
    const Tensor g = m.parameters().vars()[i].grad();
    const double n = squared_norm(g);
    if (is_dead_cab_parameter(name)) {
      EXPECT_EQ(n, 0.0) << name;
    } else {
      EXPECT_GT(n, 0.0) << name;
    }
  }
  for (const char* w : {"mid.pcab.w1", "mid.pcab.w2", "mid.pcab.w3"}) EXPECT_NE(m.parameters().get(w).grad()[0], 0.0);
}

TEST(DenoiserConfig, Validation) {
  DenoiserConfig c = small_config(6, 8, 3, 8);
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config(8, 8, 2, 12);
  EXPECT_THROW(c.validate(), ConfigError);  // 12 channels into 8 groups
  c = small_config();
  c.time_encoding_dim = 31;
  EXPECT_THROW(DenoiserModel(c, 1), ConfigError);
}

TEST(DenoiserModel, LoadParametersChecksNamesAndShapes) {
  DenoiserModel a(small_config(), 30), b(small_config(), 31);
  std::vector<std::pair<std::string, Tensor>> values;
  for (size_t i = 0; i < a.parameters().size(); ++i)
    values.emplace_back(a.parameters().names()[i], a.parameters().vars()[i].value());
  b.load_parameters(values);
  Rng rng(32);
  const Tensor x = random_tensor({1, 8, 8}, rng);
  EXPECT_EQ(a.predict(x, 3, x, 1.0), b.predict(x, 3, x, 1.0));
  values[0].second = Tensor({1});
  EXPECT_THROW(b.load_parameters(values), DataError);
  values.pop_back();
  EXPECT_THROW(b.load_parameters(values), DataError);
}
