#include "gres/eval.hpp"

#include <string>

#include "gres/errors.hpp"

namespace gres {

double sample_iou(std::span<const int> pred_point_mask, std::span<const double> confidences,
                  std::span<const int> gt_point_mask, bool gt_empty) {
  if (pred_point_mask.size() != gt_point_mask.size())
    throw ArgumentError("sample_iou: prediction has " + std::to_string(pred_point_mask.size()) +
                        " points, ground truth " + std::to_string(gt_point_mask.size()));
  if (gt_empty) {
    for (double c : confidences)
      if (c > 0.5) return 0.0;
    return 1.0;
  }
  std::size_t inter = 0, uni = 0;
  for (std::size_t p = 0; p < gt_point_mask.size(); ++p) {
    const bool a = pred_point_mask[p] != 0;
    const bool b = gt_point_mask[p] != 0;
    inter += a && b;
    uni += a || b;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double sample_iou(const Prediction& pred, std::span<const int> gt_point_mask, bool gt_empty) {
  return sample_iou(pred.final_point_mask, pred.confidences, gt_point_mask, gt_empty);
}

std::vector<int> gt_point_mask(const SceneCloud& scene, std::span<const int> target_instances) {
  const auto owner = superpoint_majority_instance(scene);
  std::vector<int> sp(scene.num_superpoints, 0);
  for (std::size_t s = 0; s < owner.size(); ++s)
    for (int t : target_instances)
      if (owner[s] == t) sp[s] = 1;
  return expand_mask_to_points(sp, scene);
}

EvalReport evaluate(std::span<const ScoredSample> samples) {
  if (samples.empty()) throw ArgumentError("evaluate needs at least one sample");
  EvalReport r;
  std::array<std::size_t, kNumCategories> hit25{}, hit50{};
  double total = 0.0;
  std::size_t all25 = 0, all50 = 0;
  for (const ScoredSample& s : samples) {
    const auto c = static_cast<std::size_t>(s.category);
    if (c >= kNumCategories) throw DataError("unknown category index " + std::to_string(c));
    total += s.iou;
    const bool a = s.iou > 0.25;
    const bool b = s.iou > 0.5;
    all25 += a;
    all50 += b;
    hit25[c] += a;
    hit50[c] += b;
    ++r.per_category[c].count;
  }
  const double n = static_cast<double>(samples.size());
  r.count = samples.size();
  r.miou = total / n;
  r.acc_025 = static_cast<double>(all25) / n;
  r.acc_05 = static_cast<double>(all50) / n;
  for (std::size_t c = 0; c < kNumCategories; ++c) {
    auto& pc = r.per_category[c];
    if (pc.count == 0) continue;
    const double m = static_cast<double>(pc.count);
    pc.acc_025 = static_cast<double>(hit25[c]) / m;
    pc.acc_05 = static_cast<double>(hit50[c]) / m;
  }
  return r;
}

EvalReport evaluate(std::span<const EvalInput> inputs) {
  std::vector<ScoredSample> scored;
  scored.reserve(inputs.size());
  for (const EvalInput& in : inputs) {
    const auto gt = gt_point_mask(*in.scene, in.expr->target_instance_ids);
    scored.push_back({sample_iou(*in.prediction, gt, in.expr->target_instance_ids.empty()), in.expr->category});
  }
  return evaluate(scored);
}

nlohmann::ordered_json to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["miou"] = r.miou;
  j["acc_025"] = r.acc_025;
  j["acc_05"] = r.acc_05;
  j["count"] = r.count;
  nlohmann::ordered_json pc;
  for (std::size_t c = 0; c < kNumCategories; ++c) {
    const auto& s = r.per_category[c];
    pc[std::string(category_tag(static_cast<Category>(c)))] = {
        {"acc_025", s.acc_025}, {"acc_05", s.acc_05}, {"count", s.count}};
  }
  j["per_category"] = pc;
  return j;
}

EvalReport evaluate_dataset(const DatasetManifest& data, const ModelParams& params, const ModelConfig& cfg,
                            bool train_split) {
  std::vector<SceneContext> contexts;
  for (const auto& s : data.scenes) contexts.push_back(make_scene_context(s));
  std::vector<ScoredSample> scored;
  for (const Sample& s : data.samples) {
    if (s.train != train_split) continue;
    const SceneCloud& scene = data.scenes[s.scene];
    ad::Tape tape;
    const BoundParams bound = bind(tape, params, false);
    const ForwardGraph g = forward_graph(tape, contexts[s.scene], s.expr, bound, cfg);
    const Prediction p = to_prediction(g, scene);
    const auto gt = gt_point_mask(scene, s.expr.target_instance_ids);
    scored.push_back({sample_iou(p, gt, s.expr.target_instance_ids.empty()), s.expr.category});
  }
  if (scored.empty())
    throw DataError(std::string("dataset has no ") + (train_split ? "train" : "val") + " samples");
  return evaluate(scored);
}

}  // namespace gres
