#include "gres/gradcheck.hpp"

#include <cmath>

#include "gres/random.hpp"
#include "gres/trainer.hpp"

namespace gres {

TinyProblem make_tiny_problem(std::uint64_t seed) {
  Rng rng = Rng::derive(seed, 0, 20);
  TinyProblem p;
  // Six clusters of five points: superpoints 0-1 form instance 0, 2-3
  // instance 1, 4-5 are background.
  const std::array<Vec3, 6> anchors{{{0.2, 0.2, 0.3}, {0.5, 0.3, 0.4}, {1.6, 1.4, 0.5},
                                     {1.9, 1.7, 0.3}, {0.3, 1.8, 0.0}, {1.8, 0.2, 0.0}}};
  const std::array<int, 6> owner{0, 0, 1, 1, -1, -1};
  for (int s = 0; s < 6; ++s) {
    for (int k = 0; k < 5; ++k) {
      p.scene.positions.push_back({anchors[s][0] + rng.uniform(-0.1, 0.1), anchors[s][1] + rng.uniform(-0.1, 0.1),
                                   anchors[s][2] + rng.uniform(0.0, 0.1)});
      p.scene.colors.push_back({rng.uniform(), rng.uniform(), rng.uniform()});
      p.scene.superpoint_id.push_back(s);
      p.scene.instance_id.push_back(owner[s]);
    }
  }
  p.scene.num_superpoints = 6;
  p.scene.instance_class = {0, 1};
  p.scene.instance_center = {{0.35, 0.25, 0.4}, {1.75, 1.55, 0.45}};

  p.expr.token_ids = {1, 5, 2, 3, 7};
  p.expr.label(Component::kAttribute) = {0};
  p.expr.label(Component::kMain) = {1};
  p.expr.label(Component::kRelation) = {2};
  p.expr.label(Component::kAuxiliary) = {4};
  p.expr.target_instance_ids = {0};
  p.expr.category = Category::kSingleTargetNoDistractor;

  p.cfg.dim = 4;
  p.cfg.point_dim = 4;
  p.cfg.point_hidden = 8;
  p.cfg.text_dim = 4;
  p.cfg.contrast_dim = 4;
  p.cfg.layers = 1;
  p.cfg.num_seeds = 4;
  p.cfg.num_queries = 2;
  p.cfg.vocab_size = 8;
  p.cfg.tau = 0.5;

  // Every tensor (embeddings and biases included) gets uniform values in
  // +-2/sqrt(fan_in). At smaller scales some attention gradients drop below
  // 1e-7, where central-difference roundoff (|loss| * eps / h) swamps a 1e-4
  // relative tolerance.
  p.params = zero_params(p.cfg);
  p.params.visit([&](const std::string&, Tensor& t) {
    const double bound = 2.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(t.rows(), 1)));
    for (double& v : t.values()) v = rng.uniform(-bound, bound);
  });
  return p;
}

ad::Var tiny_total_loss(ad::Tape& tape, std::span<const ad::Var> vars, const TinyProblem& problem,
                        const SceneContext& ctx, const LossWeights& weights) {
  BoundParams bound;
  bound.layers.resize(problem.cfg.layers);
  std::size_t i = 0;
  bound.visit([&](const std::string&, ad::Var& v) { v = vars[i++]; });
  const ForwardGraph g = forward_graph(tape, ctx, problem.expr, bound, problem.cfg);
  return sample_loss(g, ctx, problem.expr, bound, problem.cfg, weights).total;
}

ad::GradCheckResult check_model_gradients(TinyProblem& problem, const LossWeights& weights, double step) {
  const SceneContext ctx = make_scene_context(problem.scene);
  std::vector<Tensor*> params;
  problem.params.visit([&](const std::string&, Tensor& t) { params.push_back(&t); });
  return ad::grad_check(
      [&](ad::Tape& tape, std::span<const ad::Var> vars) { return tiny_total_loss(tape, vars, problem, ctx, weights); },
      params, step);
}

}  // namespace gres
