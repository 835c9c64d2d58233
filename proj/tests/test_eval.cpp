#include <algorithm>
#include <random>

#include "doctest.h"
#include "gres/errors.hpp"
#include "gres/eval.hpp"
#include "support/metric_oracle.hpp"

using namespace gres;

TEST_CASE("sample iou") {
  const std::vector<int> gt{1, 1, 0, 0};
  const std::vector<double> none{0.1};
  CHECK(sample_iou(gt, none, gt, false) == 1.0);
  CHECK(sample_iou(std::vector<int>{1, 0, 1, 0}, none, gt, false) == doctest::Approx(1.0 / 3.0));
  CHECK(sample_iou(std::vector<int>{0, 0, 0, 0}, none, gt, false) == 0.0);
  const std::vector<int> empty(4, 0);
  CHECK(sample_iou(empty, std::vector<double>{0.2, 0.5}, empty, true) == 1.0);
  CHECK(sample_iou(empty, std::vector<double>{0.2, 0.51}, empty, true) == 0.0);
  CHECK(sample_iou(empty, std::vector<double>{}, empty, true) == 1.0);
  CHECK_THROWS_AS(sample_iou(std::vector<int>{1}, none, gt, false), ArgumentError);
}

TEST_CASE("iou is symmetric for nonempty ground truth") {
  const auto pairs = oracle::random_pairs(300, 4);
  for (const auto& p : pairs) {
    if (p.gt_empty || std::count(p.pred.begin(), p.pred.end(), 1) == 0) continue;
    CHECK(sample_iou(p.pred, p.confidences, p.gt, false) == sample_iou(p.gt, p.confidences, p.pred, false));
  }
}

TEST_CASE("zero-target branch over all confidence patterns") {
  const std::vector<int> empty(5, 0);
  const std::vector<int> gt{0, 1, 1, 0, 0};
  for (const auto& conf : oracle::sign_patterns(4)) {
    const bool fired = std::any_of(conf.begin(), conf.end(), [](double c) { return c > 0.5; });
    CHECK(sample_iou(empty, conf, empty, true) == (fired ? 0.0 : 1.0));
    // A nonempty ground truth ignores confidences entirely.
    CHECK(sample_iou(gt, conf, gt, false) == 1.0);
    oracle::Pair p{empty, conf, empty, true, Category::kZeroTargetDistractor};
    CHECK(sample_iou(p.pred, p.confidences, p.gt, true) == oracle::iou(p));
  }
}

TEST_CASE("report matches the oracle on random pairs") {
  for (unsigned seed : {1u, 2u, 3u}) {
    const auto pairs = oracle::random_pairs(1000, seed);
    const auto scored = oracle::score(pairs);
    for (std::size_t i = 0; i < pairs.size(); ++i) CHECK(scored[i].iou == oracle::iou(pairs[i]));
    const EvalReport r = evaluate(scored);
    CHECK(r == oracle::report(pairs));
    CHECK(r.acc_05 <= r.acc_025);
    std::size_t total = 0;
    for (const auto& c : r.per_category) {
      total += c.count;
      CHECK(c.acc_05 <= c.acc_025);
    }
    CHECK(total == r.count);

    auto shuffled = scored;
    std::shuffle(shuffled.begin(), shuffled.end(), std::mt19937(seed));
    const EvalReport s = evaluate(shuffled);
    CHECK(s.acc_025 == r.acc_025);
    CHECK(s.acc_05 == r.acc_05);
    CHECK(s.per_category == r.per_category);
    CHECK(s.miou == doctest::Approx(r.miou).epsilon(1e-12));
  }
}

TEST_CASE("thresholds are strict") {
  const std::vector<ScoredSample> s{{0.25, Category::kMultiTarget}, {0.5, Category::kMultiTarget}};
  const EvalReport r = evaluate(s);
  CHECK(r.acc_025 == 0.5);
  CHECK(r.acc_05 == 0.0);
  CHECK(r.miou == 0.375);
  CHECK_THROWS_AS(evaluate(std::span<const ScoredSample>{}), ArgumentError);
  const std::vector<ScoredSample> bad{{1.0, static_cast<Category>(9)}};
  CHECK_THROWS_AS(evaluate(bad), DataError);
}

TEST_CASE("perfect predictions") {
  std::vector<ScoredSample> s;
  for (std::size_t c = 0; c < kNumCategories; ++c) s.push_back({1.0, static_cast<Category>(c)});
  const EvalReport r = evaluate(s);
  CHECK(r.miou == 1.0);
  CHECK(r.acc_025 == 1.0);
  CHECK(r.acc_05 == 1.0);
  for (const auto& c : r.per_category) {
    CHECK(c.count == 1);
    CHECK(c.acc_05 == 1.0);
  }
}

TEST_CASE("report json") {
  const std::vector<ScoredSample> s{{0.7, Category::kSingleTargetDistractor}, {0.0, Category::kZeroTargetNoDistractor}};
  const auto j = to_json(evaluate(s));
  std::vector<std::string> keys;
  for (const auto& [k, v] : j.items()) keys.push_back(k);
  CHECK(keys == std::vector<std::string>{"miou", "acc_025", "acc_05", "count", "per_category"});
  std::vector<std::string> cats;
  for (const auto& [k, v] : j["per_category"].items()) cats.push_back(k);
  CHECK(cats == std::vector<std::string>{"zt_dis", "zt_nodis", "st_dis", "st_nodis", "mt"});
  CHECK(j["per_category"]["st_dis"]["acc_05"] == 1.0);
  CHECK(j["miou"] == 0.35);
}

TEST_CASE("ground-truth point mask follows superpoint ownership") {
  SceneCloud scene;
  scene.positions.assign(6, {0.0, 0.0, 0.0});
  scene.colors.assign(6, {0.5, 0.5, 0.5});
  scene.superpoint_id = {0, 0, 0, 1, 1, 2};
  scene.instance_id = {0, 0, 1, 1, 1, -1};
  scene.num_superpoints = 3;
  scene.instance_class = {0, 1};
  scene.instance_center = {{0, 0, 0}, {1, 0, 0}};
  CHECK(gt_point_mask(scene, std::vector<int>{0}) == std::vector<int>{1, 1, 1, 0, 0, 0});
  CHECK(gt_point_mask(scene, std::vector<int>{1}) == std::vector<int>{0, 0, 0, 1, 1, 0});
  CHECK(gt_point_mask(scene, std::vector<int>{}) == std::vector<int>(6, 0));
}
