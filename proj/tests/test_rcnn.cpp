#include <doctest.h>

#include <cmath>
#include <numbers>

#include "pillar_rcnn/oracles.hpp"
#include "pillar_rcnn/rcnn.hpp"
#include "pillar_rcnn/rng.hpp"

using namespace pillar_rcnn;
using std::numbers::pi;

namespace {

GridSpec small_grid() {
  GridSpec g;
  g.x_min = g.y_min = -6.4;
  g.x_max = g.y_max = 6.4;
  return g;
}

FeatureMap<double> random_map(std::uint64_t seed, int stride, int h, int w, int c) {
  Rng rng(seed);
  auto m = FeatureMap<double>::zeros(stride, h, w, c);
  for (Eigen::Index i = 0; i < m.data.size(); ++i) m.data.data()[i] = rng.uniform(-1, 1);
  return m;
}

RcnnConfig small_config() {
  RcnnConfig c;
  c.grid_size = 3;
  c.hidden = {16, 8};
  c.seg_hidden = 4;
  return c;
}

RcnnWeights<double> random_weights(const RcnnConfig& cfg, int channels) {
  WeightStore s;
  s.add_random(RcnnWeights<double>::specs(cfg, channels), 8);
  return RcnnWeights<double>::from_store(s, cfg, channels);
}

Box3D car(double cx, double cy, double yaw = 0.0) { return Box3D(cx, cy, 0.8, 4.0, 1.8, 1.6, yaw, 0); }

}  // namespace

TEST_SUITE("rcnn") {
  TEST_CASE("grid points") {
    const Box3D roi(3, -2, 1, 4, 2, 1.5, 0.6, 0);
    const auto one = roi_grid_points(roi, 1);
    REQUIRE(one.size() == 1);
    CHECK((one[0] - Vector2d(3, -2)).norm() < 1e-12);

    const auto two = roi_grid_points(Box3D(0, 0, 1, 4, 2, 1.5, 0, 0), 2);
    REQUIRE(two.size() == 4);
    CHECK((two[0] - Vector2d(-1, -0.5)).norm() < 1e-12);
    CHECK((two[1] - Vector2d(-1, 0.5)).norm() < 1e-12);
    CHECK((two[2] - Vector2d(1, -0.5)).norm() < 1e-12);

    const auto seven = roi_grid_points(roi, 7);
    Vector2d mean = Vector2d::Zero();
    for (const auto& p : seven) mean += p;
    CHECK((mean / 49 - Vector2d(3, -2)).norm() < 1e-12);
  }

  TEST_CASE("bilinear sampling is exact at cell centers") {
    const GridSpec g = small_grid();
    const auto m = random_map(1, 4, 32, 32, 3);
    const double cell = 0.4;
    const Vector2d center(g.x_min + 5.5 * cell, g.y_min + 7.5 * cell);
    const auto s = bilinear_sample(m, center, g);
    CHECK((s.value - m.at(7, 5)).cwiseAbs().maxCoeff() < 1e-12);

    const Vector2d mid(g.x_min + 6.0 * cell, g.y_min + 7.5 * cell);
    const RowVector<double> want = 0.5 * (m.at(7, 5) + m.at(7, 6));
    CHECK((bilinear_sample(m, mid, g).value - want).cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("bilinear sampling pads with zeros outside the map") {
    const GridSpec g = small_grid();
    auto m = FeatureMap<double>::zeros(4, 32, 32, 1);
    m.data.setOnes();
    // The first cell center sits 0.2 m inside the range; halfway to the edge keeps 3/4 of the mass.
    const auto s = bilinear_sample(m, Vector2d(g.x_min + 0.1, 0.0), g);
    CHECK(s.value(0) == doctest::Approx(0.75));
    CHECK(bilinear_sample(m, Vector2d(50, 50), g).value(0) == 0.0);
  }

  TEST_CASE("bilinear weights match finite differences") {
    const GridSpec g = small_grid();
    auto m = random_map(2, 8, 16, 16, 1);
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
      const Vector2d p(rng.uniform(-6.6, 6.6), rng.uniform(-6.6, 6.6));
      std::vector<double> x(m.data.data(), m.data.data() + m.data.size());
      auto f = [&](const std::vector<double>& v) {
        auto mm = m;
        std::copy(v.begin(), v.end(), mm.data.data());
        return bilinear_sample(mm, p, g).value(0);
      };
      const auto grad = oracle::finite_difference_grad(f, x, 1e-5);
      std::vector<double> analytic(x.size(), 0.0);
      for (const auto& sup : bilinear_sample(m, p, g).support) {
        if (sup.valid) analytic[static_cast<std::size_t>(m.index(sup.iy, sup.ix))] += sup.weight;
      }
      for (std::size_t k = 0; k < x.size(); ++k) CHECK(std::abs(grad[k] - analytic[k]) < 1e-6);
    }
  }

  TEST_CASE("forward on a zero map with zero biases gives zeros") {
    const RcnnConfig cfg = small_config();
    auto w = random_weights(cfg, 4);
    for (auto* l : {&w.fc1, &w.fc2, &w.cls, &w.reg, &w.seg1, &w.seg2}) l->bias.setZero();
    const auto m = FeatureMap<double>::zeros(4, 32, 32, 4);
    const auto preds = rcnn_forward({car(0, 0), car(2, 1, 1.0)}, m, w, cfg, small_grid(), true);
    REQUIRE(preds.size() == 2);
    for (const auto& p : preds) {
      CHECK(p.confidence_logit == 0.0);
      for (double r : p.residuals) CHECK(r == 0.0);
      REQUIRE(p.seg_logits.size() == 9);
      for (double s : p.seg_logits) CHECK(s == 0.0);
    }
  }

  TEST_CASE("forward is permutation equivariant over RoIs") {
    const RcnnConfig cfg = small_config();
    const auto w = random_weights(cfg, 4);
    const auto m = random_map(4, 4, 32, 32, 4);
    const std::vector<Box3D> rois{car(0, 0), car(2, 1, 1.0), car(-3, 2, -0.4)};
    const std::vector<Box3D> perm{rois[2], rois[0], rois[1]};
    const auto a = rcnn_forward(rois, m, w, cfg, small_grid(), true);
    const auto b = rcnn_forward(perm, m, w, cfg, small_grid(), true);
    const std::array<std::size_t, 3> idx{2, 0, 1};
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(b[k].confidence_logit == a[idx[k]].confidence_logit);
      CHECK(b[k].residuals == a[idx[k]].residuals);
      CHECK(b[k].seg_logits == a[idx[k]].seg_logits);
    }
    CHECK(rcnn_forward({}, m, w, cfg, small_grid()).empty());
    CHECK(rcnn_forward({car(0, 0)}, m, w, cfg, small_grid()).front().seg_logits.empty());
    CHECK_THROWS_AS(rcnn_forward(rois, random_map(4, 4, 32, 32, 5), w, cfg, small_grid()), ValidationError);
  }

  TEST_CASE("residual coding") {
    const Box3D roi(1, 2, 0.8, 4, 1.8, 1.5, 0.3, 0);
    const Residuals zero{};
    const Box3D same = decode_residuals(roi, zero);
    CHECK(same.cx == roi.cx);
    CHECK(same.length == roi.length);
    CHECK(same.yaw == doctest::Approx(roi.yaw));

    Rng rng(5);
    for (int k = 0; k < 200; ++k) {
      const Box3D t(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(0, 2), rng.uniform(1, 6), rng.uniform(0.5, 3),
                    rng.uniform(1, 2), rng.uniform(-pi, pi), 0);
      const Box3D back = decode_residuals(roi, encode_residuals(roi, t));
      CHECK(std::abs(back.cx - t.cx) < 1e-6);
      CHECK(std::abs(back.cy - t.cy) < 1e-6);
      CHECK(std::abs(back.cz - t.cz) < 1e-6);
      CHECK(std::abs(back.length - t.length) < 1e-6);
      CHECK(std::abs(back.width - t.width) < 1e-6);
      CHECK(std::abs(back.height - t.height) < 1e-6);
      CHECK(heading_error(back.yaw, t.yaw) < 1e-6);
    }
  }

  TEST_CASE("confidence target") {
    CHECK(confidence_target(1.0) == 1.0);
    CHECK(confidence_target(0.75) == 1.0);
    CHECK(confidence_target(0.5) == doctest::Approx(0.5));
    CHECK(confidence_target(0.25) == 0.0);
    CHECK(confidence_target(0.0) == 0.0);
  }

  TEST_CASE("a proposal equal to its gt is a positive with target 1") {
    const Box3D gt = car(1, 1, 0.2);
    const auto batch = sample_proposals({gt, car(20, 20)}, {gt}, 1);
    REQUIRE(batch.size() == 2);
    CHECK(batch[0].positive);
    CHECK(batch[0].gt_index == 0);
    CHECK(batch[0].iou == doctest::Approx(1.0));
    CHECK(batch[0].confidence_target == 1.0);
    for (double r : batch[0].residual_target) CHECK(std::abs(r) < 1e-12);
    CHECK_FALSE(batch[1].positive);
    CHECK(batch[1].gt_index == -1);
    // Class mismatch never matches.
    Box3D ped = gt;
    ped.class_id = 1;
    CHECK_FALSE(sample_proposals({ped}, {gt}, 1)[0].positive);
  }

  TEST_CASE("sampling caps and ratio") {
    const Box3D gt = car(0, 0);
    Rng rng(6);
    std::vector<Box3D> props;
    for (int i = 0; i < 150; ++i) props.push_back(car(rng.uniform(-0.3, 0.3), rng.uniform(-0.1, 0.1)));
    for (int i = 0; i < 150; ++i) props.push_back(car(rng.uniform(10, 40), rng.uniform(10, 40)));
    const auto batch = sample_proposals(props, {gt}, 2);
    CHECK(batch.size() == 128);
    int pos = 0;
    for (const auto& s : batch) pos += s.positive;
    CHECK(pos == 64);
    for (std::size_t i = 0; i < 64; ++i) CHECK(batch[i].positive);

    const auto again = sample_proposals(props, {gt}, 2);
    for (std::size_t i = 0; i < batch.size(); ++i) CHECK(again[i].roi.cx == batch[i].roi.cx);
    const auto other = sample_proposals(props, {gt}, 3);
    bool differs = false;
    for (std::size_t i = 0; i < batch.size(); ++i) differs = differs || other[i].roi.cx != batch[i].roi.cx;
    CHECK(differs);

    // Too few positives: negatives top up to the cap.
    std::vector<Box3D> few(props.begin() + 140, props.end());
    const auto topped = sample_proposals(few, {gt}, 4);
    CHECK(topped.size() == 128);
    int tp = 0;
    for (const auto& s : topped) tp += s.positive;
    CHECK(tp == 10);
  }

  TEST_CASE("aux segmentation labels") {
    const Box3D roi(0, 0, 0.8, 4, 2, 1.5, 0, 0);
    const auto all = aux_seg_labels(roi, {roi}, 7);
    CHECK(std::count(all.begin(), all.end(), 1) == 49);
    const auto none = aux_seg_labels(roi, {Box3D(10, 0, 0.8, 4, 2, 1.5, 0, 0)}, 7);
    CHECK(std::count(none.begin(), none.end(), 1) == 0);

    // A gt covering x in [-4.1, -0.1] contains the grid rows i = 0..2 only.
    const auto half = aux_seg_labels(roi, {Box3D(-2.1, 0, 0.8, 4, 2, 1.5, 0, 0)}, 7);
    for (int i = 0; i < 7; ++i) {
      for (int j = 0; j < 7; ++j) CHECK(half[static_cast<std::size_t>(i * 7 + j)] == (i <= 2 ? 1 : 0));
    }

    Rng rng(7);
    for (int k = 0; k < 100; ++k) {
      const Box3D r(rng.uniform(-2, 2), rng.uniform(-2, 2), 1, rng.uniform(1, 5), rng.uniform(0.5, 2), 1.5,
                    rng.uniform(-pi, pi), 0);
      const std::vector<Box3D> gt{car(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-pi, pi)),
                                  car(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-pi, pi))};
      CHECK(aux_seg_labels(r, gt, 7) == oracle::aux_labels_reference(r, gt, 7));
    }
  }

  TEST_CASE("loss terms") {
    CHECK(smooth_l1(0.5) == doctest::Approx(0.125));
    CHECK(smooth_l1(-2.0) == doctest::Approx(1.5));
    CHECK(bce_with_logit(0.0, 1.0) == doctest::Approx(std::log(2.0)));
    CHECK(bce_with_logit(800.0, 1.0) == doctest::Approx(0.0));
    CHECK(std::isfinite(bce_with_logit(-800.0, 1.0)));

    const Box3D gt = car(0, 0);
    const auto batch = sample_proposals({gt, car(0.4, 0), car(30, 30)}, {gt}, 9);
    std::vector<RcnnPrediction> perfect(batch.size());
    std::vector<std::vector<std::uint8_t>> labels(batch.size());
    bool binary = true;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const double t = batch[i].confidence_target;
      binary = binary && (t == 0.0 || t == 1.0);
      perfect[i].confidence_logit = t == 1.0 ? 40.0 : -40.0;
      perfect[i].residuals = batch[i].residual_target;
      labels[i] = aux_seg_labels(batch[i].roi, {gt}, 3);
      for (auto l : labels[i]) perfect[i].seg_logits.push_back(l ? 40.0 : -40.0);
    }
    REQUIRE(binary);
    const auto loss = rcnn_loss(batch, perfect, labels);
    CHECK(loss.confidence < 1e-3);
    CHECK(loss.regression < 1e-12);
    CHECK(loss.segmentation < 1e-3);

    const std::vector<SampledRoi> negs(batch.end() - 1, batch.end());
    std::vector<RcnnPrediction> p1(1);
    p1[0].residuals = {1, 1, 1, 1, 1, 1, 1};
    CHECK(rcnn_loss(negs, p1, {{}}).regression == 0.0);
    CHECK_THROWS_AS(rcnn_loss(negs, {}, {{}}), ValidationError);
    CHECK_THROWS_AS(rcnn_loss(negs, p1, {{1, 0}}), ValidationError);

    RpnLoss rpn;
    rpn.levels = {RpnLevelLoss{4, 0.5, 0.25, 0.125, 3}, RpnLevelLoss{8, 1.0, 0.0, 0.0, 0}};
    RcnnLoss rl;
    rl.confidence = 0.3;
    rl.regression = 0.2;
    rl.segmentation = 0.1;
    const auto rep = make_loss_report(rpn, rl);
    REQUIRE(rep.rpn.size() == 2);
    CHECK(rep.rpn[0] == doctest::Approx(0.875));
    CHECK(rep.rcnn == doctest::Approx(0.5));
    CHECK(rep.total == doctest::Approx(0.875 + 1.0 + 0.5 + 0.1));
  }

  TEST_CASE("refine with zero residual weights keeps boxes") {
    const RcnnConfig cfg = small_config();
    auto w = random_weights(cfg, 4);
    w.reg.weight.setZero();
    w.reg.bias.setZero();
    w.cls.weight.setZero();
    w.cls.bias.setConstant(0.4);
    const auto m = random_map(10, 4, 32, 32, 4);
    Detection d;
    d.box = car(1, -1, 0.5);
    d.score = 0.9;
    d.iou_score = 0.6;
    const auto out = refine<double>({d}, m, w, cfg, small_grid(), {0.68, 0.68, 0.68});
    REQUIRE(out.size() == 1);
    CHECK(out[0].box.cx == doctest::Approx(1.0));
    CHECK(out[0].box.length == doctest::Approx(4.0));
    CHECK(out[0].box.yaw == doctest::Approx(0.5));
    CHECK(out[0].score == doctest::Approx(1.0 / (1.0 + std::exp(-0.4))));
    CHECK(out[0].iou_score == 0.6);
    CHECK(out[0].rectified_score == doctest::Approx(rectify(out[0].score, 0.6, 0.68)));
    CHECK(refine<double>({}, m, w, cfg, small_grid(), {0.68, 0.68, 0.68}).empty());
  }

  TEST_CASE("rcnn config validation") {
    RcnnConfig c;
    c.grid_size = 0;
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("rcnn.grid_size"), ValidationError);
    RcnnConfig d;
    d.positive_fraction = 1.5;
    CHECK_THROWS_AS(d.validate(), ValidationError);
  }
}
