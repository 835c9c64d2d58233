#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "gres/errors.hpp"
#include "gres/gradcheck.hpp"
#include "gres/losses.hpp"
#include "gres/random.hpp"

using namespace gres;

namespace {

double bce_oracle(double z, double t) {
  const double p = 1.0 / (1.0 + std::exp(-z));
  return -(t * std::log(p) + (1 - t) * std::log(1 - p));
}

Tensor random_tensor(Rng& rng, std::size_t r, std::size_t c, double lo = -1, double hi = 1) {
  Tensor t(r, c);
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// Superpoints 0-3 belong to instance 0, 4-5 to instance 1, 6-7 background.
SceneCloud eight_superpoints() {
  SceneCloud s;
  s.num_superpoints = 8;
  const int owner[8] = {0, 0, 0, 0, 1, 1, -1, -1};
  for (int k = 0; k < 8; ++k) {
    s.positions.push_back({double(k), 0, 0});
    s.colors.push_back({0, 0, 0});
    s.superpoint_id.push_back(k);
    s.instance_id.push_back(owner[k]);
  }
  s.instance_class = {0, 1};
  s.instance_center = {{1.5, 0, 0}, {4.5, 0, 0}};
  return s;
}

Expression targeting(std::vector<int> targets) {
  Expression e;
  e.token_ids = {1, 2};
  e.label(Component::kMain) = {1};
  e.target_instance_ids = std::move(targets);
  return e;
}

// Sum over positive queries of mean -log softmax over positive words, plus
// the mirror term; explicit loops.
double qta_oracle(const Tensor& q, const Tensor& t, const std::vector<int>& words, const std::vector<int>& queries,
                  double tau) {
  const std::size_t nq = q.rows(), nt = t.rows();
  std::vector<std::vector<double>> s(nq, std::vector<double>(nt));
  for (std::size_t i = 0; i < nq; ++i)
    for (std::size_t j = 0; j < nt; ++j) {
      double d = 0;
      for (std::size_t k = 0; k < q.cols(); ++k) d += q(i, k) * t(j, k);
      s[i][j] = d / tau;
    }
  double total = 0;
  for (int i : queries) {
    double z = 0;
    for (std::size_t j = 0; j < nt; ++j) z += std::exp(s[i][j]);
    for (int j : words) total -= (s[i][j] - std::log(z)) / words.size();
  }
  for (int j : words) {
    double z = 0;
    for (std::size_t i = 0; i < nq; ++i) z += std::exp(s[i][j]);
    for (int i : queries) total -= (s[i][j] - std::log(z)) / queries.size();
  }
  return total;
}

}  // namespace

TEST_CASE("loss_qgd") {
  ad::Tape tape;
  CHECK(loss_qgd(tape.constant(Tensor{{10}, {-10}}), std::vector<double>{1, 0}).value().item() < 1e-4);
  for (double t : {0.0, 0.3, 1.0})
    CHECK(loss_qgd(tape.constant(Tensor{{0}}), std::vector<double>{t}).value().item() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-14));
  Rng rng(1);
  const Tensor r = random_tensor(rng, 7, 1, -5, 5);
  std::vector<double> labels(7);
  double expect = 0;
  for (int i = 0; i < 7; ++i) {
    labels[i] = rng.uniform();
    expect += bce_oracle(r(i, 0), labels[i]) / 7;
  }
  CHECK(loss_qgd(tape.constant(r), labels).value().item() == doctest::Approx(expect).epsilon(1e-12));
  CHECK_THROWS_AS(loss_qgd(tape.constant(r), std::vector<double>{1}), ArgumentError);
  Tensor bad = r;
  bad(2, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(loss_qgd(tape.constant(bad), labels), ComputationError);
}

TEST_CASE("loss_mask") {
  const SceneCloud scene = eight_superpoints();
  const std::vector<int> sources{0, 6};
  const auto centroids = superpoint_centroids(scene);
  const QueryAssignment a = assign_queries(sources, centroids, scene, targeting({0}));
  REQUIRE(a.positive_queries == std::vector<int>{0});

  ad::Tape tape;
  Tensor right(2, 8), wrong(2, 8);
  for (int k = 0; k < 8; ++k) {
    right(0, k) = k < 4 ? 20 : -20;
    wrong(0, k) = k < 4 ? -20 : 20;
  }
  CHECK(loss_mask(tape.constant(right), a).value().item() < 1e-3);
  // k = |GT| = 4 of N_S = 8: Dice = 1 - 1/(8 + 1), BCE about 20.
  const double w = loss_mask(tape.constant(wrong), a).value().item();
  const double dice = 1.0 - 1.0 / 9.0;
  CHECK(dice == doctest::Approx(0.889).epsilon(1e-3));
  CHECK(w == doctest::Approx(20.0 + dice).epsilon(1e-6));

  // One superpoint flipped at the same saturation strictly increases the loss.
  Tensor flipped = right;
  flipped(0, 5) = 20;
  CHECK(loss_mask(tape.constant(flipped), a).value().item() > loss_mask(tape.constant(right), a).value().item());

  Rng rng(2);
  const Tensor logits = random_tensor(rng, 2, 8, -3, 3);
  double bce = 0, inter = 0, ps = 0, gs = 0;
  for (int k = 0; k < 8; ++k) {
    const double g = k < 4 ? 1.0 : 0.0;
    const double p = 1.0 / (1.0 + std::exp(-logits(0, k)));
    bce += bce_oracle(logits(0, k), g) / 8;
    inter += p * g, ps += p, gs += g;
  }
  const double expect = bce + 1.0 - (2 * inter + 1) / (ps + gs + 1);
  CHECK(loss_mask(tape.constant(logits), a).value().item() == doctest::Approx(expect).epsilon(1e-12));

  const QueryAssignment none = assign_queries(sources, centroids, scene, targeting({}));
  CHECK(loss_mask(tape.constant(logits), none).value().item() == 0.0);
}

TEST_CASE("loss_tgt") {
  ad::Tape tape;
  CHECK(loss_tgt(tape.constant(Tensor{{20}, {-20}}), std::vector<double>{1, 0}).value().item() < 1e-4);
  CHECK(loss_tgt(tape.constant(Tensor(3, 1)), std::vector<double>{1, 0, 1}).value().item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-14));
  Rng rng(3);
  const Tensor z = random_tensor(rng, 5, 1, -4, 4);
  const std::vector<double> l{1, 0, 0, 1, 0};
  double expect = 0;
  for (int i = 0; i < 5; ++i) expect += bce_oracle(z(i, 0), l[i]) / 5;
  CHECK(loss_tgt(tape.constant(z), l).value().item() == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("loss_qta") {
  ad::Tape tape;
  const Tensor eye = Tensor::identity(3);
  // Equal similarities, one query, one positive word: ln N_T, and the word->query
  // term vanishes over a single query.
  const Tensor text{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 0}, {0, 1, 1}};
  const double uniform = loss_qta(tape.constant(Tensor(1, 3)), tape.constant(text), tape.constant(eye),
                                  tape.constant(eye), std::vector<int>{2}, std::vector<int>{0}, 0.1)
                             .value()
                             .item();
  CHECK(uniform == doctest::Approx(std::log(5.0)).epsilon(1e-9));

  const double single = loss_qta(tape.constant(Tensor{{0.3, 0.2, 0.1}}), tape.constant(Tensor{{1, 2, 3}}),
                                 tape.constant(eye), tape.constant(eye), std::vector<int>{0}, std::vector<int>{0}, 0.1)
                            .value()
                            .item();
  CHECK(single == 0.0);

  Rng rng(4);
  const Tensor q = random_tensor(rng, 4, 3), t = random_tensor(rng, 6, 3);
  const Tensor wq = random_tensor(rng, 3, 2), ww = random_tensor(rng, 3, 2);
  const std::vector<int> words{1, 4}, queries{0, 3};
  const double got = loss_qta(tape.constant(q), tape.constant(t), tape.constant(wq), tape.constant(ww), words,
                              queries, 0.2)
                         .value()
                         .item();
  CHECK(got == doctest::Approx(qta_oracle(matmul(q, wq), matmul(t, ww), words, queries, 0.2)).epsilon(1e-12));

  // Reversing the queries (and the positive set with them) gives the same value.
  Tensor qrev(4, 3);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j) qrev(i, j) = q(3 - i, j);
  const double rev = loss_qta(tape.constant(qrev), tape.constant(t), tape.constant(wq), tape.constant(ww), words,
                              std::vector<int>{3, 0}, 0.2)
                         .value()
                         .item();
  CHECK(rev == doctest::Approx(got).epsilon(1e-13));

  // Logits are s / tau: doubling tau and the queries together changes nothing.
  Tensor q2 = q;
  for (double& v : q2.values()) v *= 2;
  const double doubled = loss_qta(tape.constant(q2), tape.constant(t), tape.constant(wq), tape.constant(ww), words,
                                  queries, 0.4)
                             .value()
                             .item();
  CHECK(doubled == got);

  CHECK(loss_qta(tape.constant(q), tape.constant(t), tape.constant(wq), tape.constant(ww), std::vector<int>{},
                 queries, 0.2)
            .value()
            .item() == 0.0);
  CHECK_THROWS_AS(loss_qta(tape.constant(q), tape.constant(t), tape.constant(wq), tape.constant(ww), words, queries, 0.0),
                  ArgumentError);
  CHECK_THROWS_AS(loss_qta(tape.constant(q), tape.constant(t), tape.constant(wq), tape.constant(ww),
                           std::vector<int>{6}, queries, 0.2),
                  ArgumentError);
}

TEST_CASE("loss_qta gradient") {
  Rng rng(5);
  Tensor q = random_tensor(rng, 3, 4), t = random_tensor(rng, 5, 4), wq = random_tensor(rng, 4, 3),
         ww = random_tensor(rng, 4, 3);
  std::vector<Tensor*> params{&q, &t, &wq, &ww};
  const auto r = ad::grad_check(
      [](ad::Tape&, std::span<const ad::Var> p) {
        return loss_qta(p[0], p[1], p[2], p[3], std::vector<int>{0, 2}, std::vector<int>{1, 2}, 0.3);
      },
      params, 1e-6);
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("total_loss") {
  ad::Tape tape;
  const LossComponents c{tape.constant(Tensor::scalar(1)), tape.constant(Tensor::scalar(2)),
                         tape.constant(Tensor::scalar(3)), tape.constant(Tensor::scalar(4))};
  CHECK(total_loss(c, LossWeights{}).value().item() == doctest::Approx(7.7).epsilon(1e-15));
  CHECK(total_loss(c, LossWeights{0, 0, 0, 0}).value().item() == 0.0);
  CHECK_THROWS_AS(total_loss(c, LossWeights{0.5, -1, 0, 0}), ArgumentError);

  // All terms nonnegative and finite on a real forward pass.
  TinyProblem tp = make_tiny_problem(2);
  const SceneContext ctx = make_scene_context(tp.scene);
  const BoundParams b = bind(tape, tp.params, false);
  const ForwardGraph g = forward_graph(tape, ctx, tp.expr, b, tp.cfg);
  const SampleLoss sl = sample_loss(g, ctx, tp.expr, b, tp.cfg, LossWeights{});
  for (const ad::Var& v : {sl.components.qgd, sl.components.mask, sl.components.tgt, sl.components.qta}) {
    CHECK(std::isfinite(v.value().item()));
    CHECK(v.value().item() >= 0.0);
  }
  const double recomputed = 5 * sl.components.qgd.value().item() + sl.components.mask.value().item() +
                            0.1 * sl.components.tgt.value().item() + 0.1 * sl.components.qta.value().item();
  CHECK(sl.total.value().item() == doctest::Approx(recomputed).epsilon(1e-14));
}

TEST_CASE("assign_queries") {
  const SceneCloud scene = eight_superpoints();
  const auto centroids = superpoint_centroids(scene);

  // Queries on superpoints 1, 2 (instance 0), 4 (instance 1), 7 (background).
  const std::vector<int> sources{1, 4, 7, 2};
  const QueryAssignment a = assign_queries(sources, centroids, scene, targeting({0}));
  CHECK(a.positives == std::vector<std::vector<int>>{{0, 3}});
  CHECK(a.target_labels == std::vector<double>{1, 0, 0, 1});
  CHECK(a.positive_queries == std::vector<int>{0, 3});
  REQUIRE(a.positive_masks.size() == 2);
  CHECK(a.positive_masks[0] == instance_superpoint_mask(scene, 0));

  // Instance 1 holds no query source: the query nearest its center (4.5, 0, 0)
  // is the one on superpoint 6 (distance 1.5) rather than 2 (distance 2.5).
  const std::vector<int> away{2, 6, 0};
  const QueryAssignment b = assign_queries(away, centroids, scene, targeting({1}));
  CHECK(b.positives == std::vector<std::vector<int>>{{1}});
  CHECK(b.target_labels == std::vector<double>{0, 1, 0});

  // Equidistant queries (superpoints 3 and 6 are both 1.5 from 4.5): lower rank wins.
  const std::vector<int> tie{6, 3};
  CHECK(assign_queries(tie, centroids, scene, targeting({1})).positives == std::vector<std::vector<int>>{{0}});

  // A query serving two targets carries the union of their masks.
  const std::vector<int> shared{7};
  const QueryAssignment u = assign_queries(shared, centroids, scene, targeting({0, 1}));
  REQUIRE(u.positive_masks.size() == 1);
  CHECK(u.positive_masks[0].values == std::vector<double>{1, 1, 1, 1, 1, 1, 0, 0});

  const QueryAssignment none = assign_queries(sources, centroids, scene, targeting({}));
  CHECK(none.target_labels == std::vector<double>(4, 0.0));
  CHECK(none.positive_queries.empty());

  CHECK_THROWS_AS(assign_queries(sources, centroids, scene, targeting({2})), ArgumentError);
  CHECK_THROWS_AS(assign_queries(std::vector<int>{8}, centroids, scene, targeting({0})), ArgumentError);
}
