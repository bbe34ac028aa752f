#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "msod/oam_losses.hpp"
#include "test_util.hpp"

using namespace msod;

namespace {

// Tiny world shared by the plan/branch tests.
struct BranchFixture {
  ModelConfig mc;
  ModelParams m;
  FeatureGrid grid;
  SceneRecord scene;
  ProposalSet props;

  explicit BranchFixture(uint64_t seed, bool strong) : m(make_params(seed)), grid(make_grid(seed)) {
    scene.id = 0;
    scene.tier = strong ? Tier::strong : Tier::weak;
    scene.gt = {{0, Box(2, 2, 8, 8)}, {1, Box(9, 9, 14, 15)}};
    scene.labels = {0, 1};
    props.image_id = 0;
    std::mt19937_64 rng(seed + 17);
    props.boxes = {Box(2, 2, 8, 8), Box(9, 9, 14, 15)};
    for (int i = 0; i < 4; ++i) props.boxes.push_back(testutil::random_box(rng, 16.0, 2.0, 8.0));
  }

  static ModelParams make_params(uint64_t seed) {
    ModelConfig mc;
    mc.channels = 2;
    mc.pool_grid = 2;
    mc.encoder_dim = 8;
    mc.num_classes = 2;
    std::mt19937_64 rng(seed);
    return ModelParams::init(mc, rng);
  }

  static FeatureGrid make_grid(uint64_t seed) {
    std::mt19937_64 rng(seed + 5);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> values(16 * 16 * 2);
    for (double& v : values) v = n(rng);
    return FeatureGrid::from_values(16, 16, 2, std::move(values));
  }
};

}  // namespace

TEST_CASE("image labels from class lists") {
  const ImageLabel label = ImageLabel::from_classes({2, 0, 2}, 4);
  CHECK(label.y == std::vector<uint8_t>{1, 0, 1, 0});
  CHECK_THROWS_AS(ImageLabel::from_classes({4}, 4), std::invalid_argument);
  CHECK_THROWS_AS(ImageLabel::from_classes({-1}, 4), std::invalid_argument);
}

TEST_CASE("image-level loss frozen values") {
  // Single class, alpha = 1/2, present: -log(1/2) = log 2.
  const double l1 = image_level_loss({0.5}, ImageLabel::from_classes({0}, 1), nullptr);
  CHECK(l1 == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  // Two classes at alpha = 1/2, one present, one absent: both terms log 2.
  std::vector<double> d;
  const double l2 = image_level_loss({0.5, 0.5}, ImageLabel::from_classes({0}, 2), &d);
  CHECK(l2 == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
  CHECK(d[0] == doctest::Approx(-2.0).epsilon(1e-12));
  CHECK(d[1] == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("image-level loss clamps its log arguments") {
  std::vector<double> d;
  const double l = image_level_loss({0.0}, ImageLabel::from_classes({0}, 1), &d);
  CHECK(l == doctest::Approx(-std::log(kLogEps)).epsilon(1e-12));
  CHECK(d[0] == 0.0);
  // Absent class saturated at 1 clamps the same way.
  const double l2 = image_level_loss({1.0}, ImageLabel::from_classes({}, 1), &d);
  CHECK(l2 == doctest::Approx(-std::log(kLogEps)).epsilon(1e-12));
  CHECK(d[0] == 0.0);
}

TEST_CASE("image-level loss gradient matches finite differences") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> ua(0.05, 0.95);
  std::uniform_int_distribution<int> ub(0, 1);
  for (int trial = 0; trial < 50; ++trial) {
    const int C = 4;
    std::vector<double> alpha(C);
    std::vector<int> present;
    for (int c = 0; c < C; ++c) {
      alpha[c] = ua(rng);
      if (ub(rng)) present.push_back(c);
    }
    const ImageLabel label = ImageLabel::from_classes(present, C);
    std::vector<double> d;
    image_level_loss(alpha, label, &d);
    for (int c = 0; c < C; ++c) {
      const double h = 1e-6;
      std::vector<double> ap = alpha, am = alpha;
      ap[c] += h;
      am[c] -= h;
      const double fd =
          (image_level_loss(ap, label, nullptr) - image_level_loss(am, label, nullptr)) /
          (2.0 * h);
      CHECK(d[c] == doctest::Approx(fd).epsilon(1e-5));
    }
  }
}

TEST_CASE("target assignment picks the best gt and the fg threshold is inclusive") {
  const std::vector<GtObject> gt = {{2, Box(0, 0, 4, 4)}, {1, Box(10, 10, 14, 14)}};
  // Exact match, a far box, and a half-overlap box: [0,4)x[2,6) vs [0,4)x[0,4)
  // has intersection 8, union 24, IoU 1/3.
  const std::vector<Box> props = {Box(0, 0, 4, 4), Box(20, 20, 30, 30), Box(0, 2, 4, 6),
                                  Box(10, 10, 14, 14)};
  const auto targets = assign_targets(props, gt, 0.5);
  CHECK(targets[0].u == 3);
  CHECK(targets[0].matched_gt == 0);
  CHECK(targets[0].max_iou == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(targets[0].v.tx) < 1e-12);
  CHECK(std::abs(targets[0].v.th) < 1e-12);
  CHECK(targets[1].u == 0);
  CHECK(targets[1].matched_gt == -1);
  CHECK(targets[2].u == 0);
  CHECK(targets[2].max_iou == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(targets[3].u == 2);

  // IoU exactly at the threshold counts as foreground: [0,4)x[0,2) vs
  // [0,4)x[0,4): intersection 8, union 16.
  const auto half = assign_targets({Box(0, 0, 4, 2)}, {{0, Box(0, 0, 4, 4)}}, 0.5);
  CHECK(half[0].u == 1);

  // Equal-IoU tie goes to the lower gt index.
  const auto tie =
      assign_targets({Box(0, 0, 4, 4)}, {{3, Box(0, 0, 4, 4)}, {1, Box(0, 0, 4, 4)}}, 0.5);
  CHECK(tie[0].matched_gt == 0);
  CHECK(tie[0].u == 4);
}

TEST_CASE("proposal sampling caps foreground and fills up to the budget") {
  std::mt19937_64 rng(7);
  std::vector<ProposalTarget> targets(64);
  for (int i = 0; i < 10; ++i) targets[i].u = 1;

  SUBCASE("plenty of background") {
    const SampledBatch b = sample_proposals(targets, 32, 0.25, rng);
    CHECK(b.indices.size() == 32);
    CHECK(b.fg_count == 8);  // floor(0.25 * 32), enough fg available
    std::set<int> uniq(b.indices.begin(), b.indices.end());
    CHECK(uniq.size() == b.indices.size());
    for (int idx : b.indices) CHECK(idx < 64);
  }
  SUBCASE("scarce background spills foreground into the leftover fill") {
    std::vector<ProposalTarget> mostly_fg(64);
    for (int i = 0; i < 60; ++i) mostly_fg[i].u = 2;
    const SampledBatch b = sample_proposals(mostly_fg, 32, 0.25, rng);
    CHECK(b.indices.size() == 32);
    CHECK(b.fg_count == 28);  // 8 capped + 4 bg + 20 leftover fg
  }
  SUBCASE("fewer proposals than the budget uses them all") {
    std::vector<ProposalTarget> few(16);
    few[0].u = 1;
    const SampledBatch b = sample_proposals(few, 32, 0.25, rng);
    CHECK(b.indices.size() == 16);
    CHECK(b.fg_count == 1);
  }
}

TEST_CASE("proposal loss frozen values") {
  // C = 2: three-way uniform p, two background samples.
  Matrix p(3, 2), reg(8, 2);
  for (double& v : p.a) v = 1.0 / 3.0;
  std::vector<ProposalTarget> targets(2);
  SampledBatch sample;
  sample.indices = {0, 1};

  Matrix d_cls(3, 2), d_reg(8, 2);
  const auto out = proposal_loss(p, reg, targets, sample, &d_cls, &d_reg);
  CHECK(out.cls == doctest::Approx(std::log(3.0)).epsilon(1e-12));
  CHECK(out.reg == 0.0);
  // d = (p - onehot(0)) / M with M = 2.
  CHECK(d_cls(0, 0) == doctest::Approx((1.0 / 3.0 - 1.0) / 2.0).epsilon(1e-12));
  CHECK(d_cls(1, 0) == doctest::Approx((1.0 / 3.0) / 2.0).epsilon(1e-12));
  for (double v : d_reg.a) CHECK(v == 0.0);

  // Single foreground sample of class 0 with a pure tx residual of 0.5:
  // smooth L1 gives 0.125 and gradient 0.5 on that coordinate.
  std::vector<ProposalTarget> fg(1);
  fg[0].u = 1;
  fg[0].v = Offset{-0.5, 0.0, 0.0, 0.0};
  Matrix p1(3, 1), reg1(8, 1);
  p1(0, 0) = p1(1, 0) = p1(2, 0) = 1.0 / 3.0;
  SampledBatch s1;
  s1.indices = {0};
  Matrix dc1(3, 1), dr1(8, 1);
  const auto out1 = proposal_loss(p1, reg1, fg, s1, &dc1, &dr1);
  CHECK(out1.reg == doctest::Approx(0.125).epsilon(1e-12));
  CHECK(dr1(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(dr1(4, 0) == 0.0);  // other class block untouched
}

TEST_CASE("proposal loss skips the gradient of clamped terms") {
  Matrix p(2, 1), reg(4, 1);
  p(0, 0) = 0.0;  // impossible target probability
  p(1, 0) = 1.0;
  std::vector<ProposalTarget> targets(1);
  SampledBatch sample;
  sample.indices = {0};
  Matrix d_cls(2, 1), d_reg(4, 1);
  const auto out = proposal_loss(p, reg, targets, sample, &d_cls, &d_reg);
  CHECK(out.cls == doctest::Approx(-std::log(kLogEps)).epsilon(1e-12));
  for (double v : d_cls.a) CHECK(v == 0.0);
}

TEST_CASE("second-pass selection takes the top phi per labeled class") {
  OamForward f;
  f.phi = Matrix(2, 4);
  f.reg = Matrix(8, 4);
  f.phi(0, 0) = 0.1;
  f.phi(0, 1) = 0.4;
  f.phi(0, 2) = 0.3;
  f.phi(0, 3) = 0.2;
  f.phi(1, 0) = 0.9;  // unlabeled class, must be ignored
  const std::vector<Box> props = {Box(0, 0, 2, 2), Box(1, 1, 3, 3), Box(2, 2, 4, 4),
                                  Box(3, 3, 5, 5)};
  const ImageLabel label = ImageLabel::from_classes({0}, 2);

  const auto sel = select_second_pass_boxes(f, props, label, 2, 16, 16);
  REQUIRE(sel.has_value());
  REQUIRE(sel->boxes.size() == 2);
  // Zero offsets keep the boxes in place: highest-phi proposals 1 then 2.
  CHECK(sel->boxes[0].x1 == doctest::Approx(1.0));
  CHECK(sel->boxes[1].x1 == doctest::Approx(2.0));

  // Asking for more than B proposals just takes them all.
  const auto all = select_second_pass_boxes(f, props, label, 10, 16, 16);
  REQUIRE(all.has_value());
  CHECK(all->boxes.size() == 4);

  // Offsets that throw every box outside the grid leave nothing to pool.
  for (int r = 0; r < 4; ++r) f.reg(0, r) = 1e9;  // clamped to a huge shift
  const auto none = select_second_pass_boxes(f, props, label, 2, 16, 16);
  CHECK_FALSE(none.has_value());
}

TEST_CASE("plans freeze tier, targets and the second pass") {
  std::mt19937_64 rng(3);
  ProposalLossConfig cfg;
  cfg.sample_size = 8;
  cfg.second_pass_top = 3;

  BranchFixture weak(11, false);
  const OamImagePlan wp =
      plan_oam_image(weak.m, weak.grid, weak.scene, weak.props, cfg, true, rng);
  CHECK_FALSE(wp.strong);
  CHECK(wp.label.y == std::vector<uint8_t>{1, 1});
  CHECK(wp.feats1.cols == 6);
  CHECK(wp.feats1.rows == 2 * 2 * 2);
  CHECK(wp.targets1.empty());
  CHECK(wp.sample1.indices.empty());
  CHECK(wp.has_pass2);
  CHECK(wp.feats2.cols > 0);
  CHECK(wp.feats2.cols <= 2 * cfg.second_pass_top);

  BranchFixture strong(12, true);
  const OamImagePlan sp =
      plan_oam_image(strong.m, strong.grid, strong.scene, strong.props, cfg, false, rng);
  CHECK(sp.strong);
  CHECK(sp.targets1.size() == 6);
  CHECK_FALSE(sp.sample1.indices.empty());
  CHECK_FALSE(sp.has_pass2);
}

TEST_CASE("weak-only batches contribute no proposal term") {
  std::mt19937_64 rng(5);
  ProposalLossConfig cfg;
  BranchFixture fx(21, false);
  const OamImagePlan plan =
      plan_oam_image(fx.m, fx.grid, fx.scene, fx.props, cfg, false, rng);
  const OamLossBreakdown out = oam_branch_loss(fx.m, {plan}, nullptr);
  CHECK(out.gc1 > 0.0);
  CHECK(out.cls1 == 0.0);
  CHECK(out.reg1 == 0.0);
  CHECK(out.gc2 == 0.0);
  CHECK(out.cls2 == 0.0);
}

TEST_CASE("uniform scores give alpha = 1/C and the frozen image loss") {
  // All-zero parameters: p is uniform, gamma_c = 1/C, gamma_r = 1/B, so
  // alpha_c = 1/C = 1/2 and each class contributes log 2.
  BranchFixture fx(31, false);
  for_each_tensor(fx.m.t, [](const char*, std::vector<double>& v) {
    std::fill(v.begin(), v.end(), 0.0);
  });
  std::mt19937_64 rng(1);
  ProposalLossConfig cfg;
  const OamImagePlan plan =
      plan_oam_image(fx.m, fx.grid, fx.scene, fx.props, cfg, false, rng);
  const OamLossBreakdown out = oam_branch_loss(fx.m, {plan}, nullptr);
  CHECK(out.gc1 == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("branch loss gradient matches finite differences") {
  ProposalLossConfig cfg;
  cfg.sample_size = 6;
  cfg.second_pass_top = 2;
  for (uint64_t seed : {41, 42, 43, 44, 45}) {
    CAPTURE(seed);
    BranchFixture strong(seed, true);
    BranchFixture weak(seed + 100, false);
    std::mt19937_64 rng(seed);
    const bool bba = seed % 2 == 1;
    std::vector<OamImagePlan> plans;
    plans.push_back(
        plan_oam_image(strong.m, strong.grid, strong.scene, strong.props, cfg, bba, rng));
    plans.push_back(
        plan_oam_image(strong.m, weak.grid, weak.scene, weak.props, cfg, bba, rng));

    ParamSet grads = zeros_like(strong.m.t);
    oam_branch_loss(strong.m, plans, &grads);
    const double err = testutil::gradient_check(
        strong.m,
        [&](const ModelParams& p) { return oam_branch_loss(p, plans, nullptr).total(); }, grads);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("branch loss and gradients are deterministic") {
  ProposalLossConfig cfg;
  BranchFixture fx(51, true);
  std::mt19937_64 rng1(9), rng2(9);
  const OamImagePlan p1 = plan_oam_image(fx.m, fx.grid, fx.scene, fx.props, cfg, true, rng1);
  const OamImagePlan p2 = plan_oam_image(fx.m, fx.grid, fx.scene, fx.props, cfg, true, rng2);
  ParamSet g1 = zeros_like(fx.m.t), g2 = zeros_like(fx.m.t);
  const double l1 = oam_branch_loss(fx.m, {p1}, &g1).total();
  const double l2 = oam_branch_loss(fx.m, {p2}, &g2).total();
  CHECK(l1 == l2);
  CHECK(testutil::flatten(g1) == testutil::flatten(g2));
}
