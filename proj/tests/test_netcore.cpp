#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "msod/netcore.hpp"
#include "test_util.hpp"

using namespace msod;

namespace {

FeatureGrid random_grid(std::mt19937_64& rng, int h, int w, int c) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(static_cast<size_t>(h) * w * c);
  for (double& x : v) x = n(rng);
  return FeatureGrid::from_values(h, w, c, std::move(v));
}

ModelConfig small_cfg() {
  ModelConfig cfg;
  cfg.channels = 2;
  cfg.pool_grid = 2;
  cfg.encoder_dim = 6;
  cfg.num_classes = 3;
  return cfg;
}

}  // namespace

TEST_CASE("summed area table matches direct sums") {
  std::mt19937_64 rng(5);
  const auto g = random_grid(rng, 9, 7, 2);
  std::uniform_int_distribution<int> xs(0, 7), ys(0, 9);
  for (int trial = 0; trial < 200; ++trial) {
    int x0 = xs(rng), x1 = xs(rng), y0 = ys(rng), y1 = ys(rng);
    if (x0 > x1) std::swap(x0, x1);
    if (y0 > y1) std::swap(y0, y1);
    for (int c = 0; c < 2; ++c) {
      double direct = 0.0;
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) direct += g.at(c, y, x);
      CHECK(g.rect_sum(c, x0, y0, x1, y1) == doctest::Approx(direct).epsilon(1e-10));
    }
  }
}

TEST_CASE("roi_pool with S=1 over the full grid equals channel means") {
  std::mt19937_64 rng(9);
  const auto g = random_grid(rng, 8, 6, 3);
  const auto pooled = roi_pool(g, Box(0, 0, 6, 8), 1);
  REQUIRE(pooled.size() == 3);
  for (int c = 0; c < 3; ++c) {
    double mean = 0.0;
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 6; ++x) mean += g.at(c, y, x);
    mean /= 48.0;
    CHECK(pooled[c] == doctest::Approx(mean).epsilon(1e-12));
  }
}

TEST_CASE("roi_pool shifts with the box over a periodic pattern") {
  // Period-4 stripes; a 12-px box pooled 3x3 sees one period per cell, so
  // sliding the box by a whole cell reproduces the same pooled values.
  const int H = 8, W = 24;
  std::vector<double> v(static_cast<size_t>(H) * W);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) v[static_cast<size_t>(y) * W + x] = (x % 4 < 2) ? 1.0 : -1.0;
  const auto g = FeatureGrid::from_values(H, W, 1, std::move(v));
  const auto a = roi_pool(g, Box(0, 0, 12, 6), 3);
  const auto b = roi_pool(g, Box(4, 0, 16, 6), 3);
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
}

TEST_CASE("roi_pool empty cell takes nearest pixel") {
  // Sub-pixel box: every cell is empty and falls back to the pixel under it.
  std::vector<double> v(16);
  std::iota(v.begin(), v.end(), 0.0);
  const auto g = FeatureGrid::from_values(4, 4, 1, std::move(v));
  const auto pooled = roi_pool(g, Box(2.1, 1.2, 2.4, 1.45), 3);
  for (double x : pooled) CHECK(x == doctest::Approx(g.at(0, 1, 2)).epsilon(1e-12));
}

TEST_CASE("roi_pool rejects boxes outside the grid") {
  std::mt19937_64 rng(13);
  const auto g = random_grid(rng, 4, 4, 1);
  CHECK_THROWS_AS(roi_pool(g, Box(-5, -5, -1, -1), 3), std::runtime_error);
  CHECK_NOTHROW(roi_pool(g, Box(-5, -5, 1, 1), 3));
}

TEST_CASE("oam_forward uniform logits give alpha 1/2 with two classes") {
  ModelConfig cfg = small_cfg();
  cfg.num_classes = 2;
  std::mt19937_64 rng(1);
  ModelParams m = ModelParams::init(cfg, rng);
  // Zero weights make every logit equal, the fully symmetric case.
  for_each_tensor(m.t, [](const char*, std::vector<double>& v) {
    std::fill(v.begin(), v.end(), 0.0);
  });
  const Matrix feats = testutil::random_features(rng, cfg.feature_dim(), 4);
  const auto f = oam_forward(m, feats);
  REQUIRE(f.alpha.size() == 2);
  CHECK(f.alpha[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(f.alpha[1] == doctest::Approx(0.5).epsilon(1e-12));
  for (int c = 0; c < 2; ++c)
    for (int b = 0; b < 4; ++b) CHECK(f.gamma_r(c, b) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("oam_forward with a single proposal collapses gamma_r") {
  ModelConfig cfg = small_cfg();
  std::mt19937_64 rng(2);
  ModelParams m = ModelParams::init(cfg, rng);
  const Matrix feats = testutil::random_features(rng, cfg.feature_dim(), 1);
  const auto f = oam_forward(m, feats);
  for (int c = 0; c < cfg.num_classes; ++c) {
    CHECK(f.gamma_r(c, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(f.alpha[c] == doctest::Approx(f.gamma_c(c, 0)).epsilon(1e-12));
  }
}

TEST_CASE("forward normalization invariants over random instances") {
  ModelConfig cfg = small_cfg();
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> n_props(1, 9);
  for (int trial = 0; trial < 300; ++trial) {
    ModelParams m = ModelParams::init(cfg, rng);
    const int B = n_props(rng);
    const Matrix feats = testutil::random_features(rng, cfg.feature_dim(), B, 2.0);
    const auto f = oam_forward(m, feats);
    for (int c = 0; c < cfg.num_classes; ++c) {
      double row = 0.0;
      for (int b = 0; b < B; ++b) row += f.gamma_r(c, b);
      CHECK(std::abs(row - 1.0) < 1e-9);
      CHECK(f.alpha[c] >= 0.0);
      CHECK(f.alpha[c] <= 1.0 + 1e-9);
    }
    for (int b = 0; b < B; ++b) {
      double col = 0.0, colc = 0.0;
      for (int k = 0; k <= cfg.num_classes; ++k) col += f.p(k, b);
      for (int c = 0; c < cfg.num_classes; ++c) colc += f.gamma_c(c, b);
      CHECK(std::abs(col - 1.0) < 1e-9);
      CHECK(std::abs(colc - 1.0) < 1e-9);
    }
    const auto s = supervised_forward(m, feats);
    for (int b = 0; b < B; ++b) {
      double col = 0.0;
      for (int k = 0; k <= cfg.num_classes; ++k) col += s.p(k, b);
      CHECK(std::abs(col - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("supervised_forward uniform logits are symmetric") {
  ModelConfig cfg = small_cfg();
  std::mt19937_64 rng(21);
  ModelParams m = ModelParams::init(cfg, rng);
  for_each_tensor(m.t, [](const char*, std::vector<double>& v) {
    std::fill(v.begin(), v.end(), 0.0);
  });
  const Matrix feats = testutil::random_features(rng, cfg.feature_dim(), 3);
  const auto f = supervised_forward(m, feats);
  for (int k = 0; k <= cfg.num_classes; ++k)
    for (int b = 0; b < 3; ++b)
      CHECK(f.p(k, b) == doctest::Approx(1.0 / (cfg.num_classes + 1)).epsilon(1e-12));
}

TEST_CASE("alpha gradient matches the product rule on a 2x2 case") {
  ModelConfig cfg = small_cfg();
  cfg.num_classes = 2;
  std::mt19937_64 rng(31);
  ModelParams m = ModelParams::init(cfg, rng);
  const Matrix feats = testutil::random_features(rng, cfg.feature_dim(), 2);
  const auto f = oam_forward(m, feats);

  // d alpha_0 / d score(0, b), written out by hand:
  //   sum_r gamma_c(0,r) * gamma_r(0,r) * (delta_rb - gamma_r(0,b))
  Matrix d_score(2, 2), d_cls(3, 2);
  alpha_backward(f, {1.0, 0.0}, d_score, d_cls);
  for (int b = 0; b < 2; ++b) {
    double hand = 0.0;
    for (int r = 0; r < 2; ++r) {
      const double delta = (r == b) ? 1.0 : 0.0;
      hand += f.gamma_c(0, r) * f.gamma_r(0, r) * (delta - f.gamma_r(0, b));
    }
    CHECK(d_score(0, b) == doctest::Approx(hand).epsilon(1e-10));
    CHECK(d_score(1, b) == doctest::Approx(0.0).epsilon(1e-12));
  }
}

TEST_CASE("full backward matches finite differences on sum of squared alpha") {
  ModelConfig cfg = small_cfg();
  std::mt19937_64 rng(37);
  for (int trial = 0; trial < 5; ++trial) {
    ModelParams m = ModelParams::init(cfg, rng);
    const Matrix feats = testutil::random_features(rng, cfg.feature_dim(), 5);
    const auto loss = [&feats](const ModelParams& p) {
      const auto f = oam_forward(p, feats);
      double L = 0.0;
      for (double a : f.alpha) L += a * a;
      return L;
    };
    const auto f = oam_forward(m, feats);
    ParamSet grads = zeros_like(m.t);
    Matrix d_score(f.score.rows, f.score.cols), d_cls(f.cls_logits.rows, f.cls_logits.cols),
        d_reg(f.reg.rows, f.reg.cols);
    std::vector<double> d_alpha(cfg.num_classes);
    for (int c = 0; c < cfg.num_classes; ++c) d_alpha[c] = 2.0 * f.alpha[c];
    alpha_backward(f, d_alpha, d_score, d_cls);
    oam_backward(m, feats, f, d_score, d_cls, d_reg, grads);
    CHECK(testutil::gradient_check(m, loss, grads) < 1e-4);
  }
}

TEST_CASE("sgd frozen single step and momentum accumulation") {
  ModelConfig cfg;
  cfg.channels = 1;
  cfg.pool_grid = 1;
  cfg.encoder_dim = 1;
  cfg.num_classes = 1;
  std::mt19937_64 rng(41);
  ModelParams m = ModelParams::init(cfg, rng);
  for_each_tensor(m.t, [](const char*, std::vector<double>& v) {
    std::fill(v.begin(), v.end(), 1.0);
  });
  ParamSet g = zeros_like(m.t);
  for_each_tensor(g, [](const char*, std::vector<double>& v) {
    std::fill(v.begin(), v.end(), 1.0);
  });
  ParamSet vel = zeros_like(m.t);
  SgdConfig opt{0.1, 0.9, 0.0};
  sgd_step(m.t, g, vel, opt);
  CHECK(m.t.enc_oam.w(0, 0) == doctest::Approx(0.9).epsilon(1e-12));
  // Second identical gradient: v = 0.9 * 1 + 1 = 1.9, w = 0.9 - 0.19.
  sgd_step(m.t, g, vel, opt);
  CHECK(m.t.enc_oam.w(0, 0) == doctest::Approx(0.71).epsilon(1e-12));
}

TEST_CASE("weight decay enters the velocity") {
  ModelConfig cfg;
  cfg.channels = 1;
  cfg.pool_grid = 1;
  cfg.encoder_dim = 1;
  cfg.num_classes = 1;
  std::mt19937_64 rng(43);
  ModelParams m = ModelParams::init(cfg, rng);
  for_each_tensor(m.t, [](const char*, std::vector<double>& v) {
    std::fill(v.begin(), v.end(), 2.0);
  });
  ParamSet g = zeros_like(m.t);
  ParamSet vel = zeros_like(m.t);
  sgd_step(m.t, g, vel, {0.5, 0.9, 0.1});
  // v = 0 + 0 + 0.1 * 2 = 0.2, w = 2 - 0.5 * 0.2
  CHECK(m.t.enc_oam.w(0, 0) == doctest::Approx(1.9).epsilon(1e-12));
}

TEST_CASE("separate encoders stay independent") {
  ModelConfig cfg = small_cfg();
  cfg.shared_encoder = false;
  std::mt19937_64 rng(47);
  ModelParams m = ModelParams::init(cfg, rng);
  REQUIRE_FALSE(m.t.enc_sup.empty());
  const std::vector<double> before = m.t.enc_sup.w.a;
  // A pure annotation-branch loss must leave the supervised encoder untouched.
  const Matrix feats = testutil::random_features(rng, cfg.feature_dim(), 4);
  const auto f = oam_forward(m, feats);
  ParamSet grads = zeros_like(m.t);
  Matrix d_score(f.score.rows, f.score.cols), d_cls(f.cls_logits.rows, f.cls_logits.cols),
      d_reg(f.reg.rows, f.reg.cols);
  std::vector<double> d_alpha(cfg.num_classes, 1.0);
  alpha_backward(f, d_alpha, d_score, d_cls);
  oam_backward(m, feats, f, d_score, d_cls, d_reg, grads);
  ParamSet vel = zeros_like(m.t);
  sgd_step(m.t, grads, vel, {1e-2, 0.9, 0.0});
  CHECK(m.t.enc_sup.w.a == before);
}

TEST_CASE("check_finite names the offending tensor") {
  ModelConfig cfg = small_cfg();
  std::mt19937_64 rng(53);
  ModelParams m = ModelParams::init(cfg, rng);
  m.t.w_reg.w(0, 0) = std::numeric_limits<double>::quiet_NaN();
  try {
    check_finite(m.t, "unit test");
    FAIL("expected throw");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("w_reg.w") != std::string::npos);
  }
}

TEST_CASE("init is deterministic per seed") {
  ModelConfig cfg = small_cfg();
  std::mt19937_64 a(99), b(99), c(100);
  const ModelParams ma = ModelParams::init(cfg, a);
  const ModelParams mb = ModelParams::init(cfg, b);
  const ModelParams mc = ModelParams::init(cfg, c);
  CHECK(ma.t.enc_oam.w.a == mb.t.enc_oam.w.a);
  CHECK(ma.t.enc_oam.w.a != mc.t.enc_oam.w.a);
}
