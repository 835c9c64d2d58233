#pragma once

// A tiny, fully specified problem (about 30 points, 6 superpoints, 4 seeds,
// 2 queries, width 4, one decoder layer) for finite-difference checks of the
// whole objective.

#include <cstdint>

#include "gres/losses.hpp"
#include "gres/model.hpp"
#include "gres/tape.hpp"

namespace gres {

struct TinyProblem {
  SceneCloud scene;
  Expression expr;
  ModelConfig cfg;
  ModelParams params;
};

TinyProblem make_tiny_problem(std::uint64_t seed);

// Total loss for the problem's (scene, expression) with params taken from `vars`
// (bound in ModelParams visit order).
ad::Var tiny_total_loss(ad::Tape& tape, std::span<const ad::Var> vars, const TinyProblem& problem,
                        const SceneContext& ctx, const LossWeights& weights);

ad::GradCheckResult check_model_gradients(TinyProblem& problem, const LossWeights& weights, double step);

}  // namespace gres
