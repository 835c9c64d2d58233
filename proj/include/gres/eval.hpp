#pragma once

// Generalized referring-segmentation metrics: per-sample IoU with the
// zero-target convention, mIoU, Acc@0.25 / Acc@0.5 and the five-way
// category breakdown.

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "json.hpp"

#include "gres/data.hpp"
#include "gres/model.hpp"

namespace gres {

// Empty ground truth: 1 if no confidence exceeds 0.5, else 0. Otherwise
// point-level |pred & gt| / |pred | gt|.
double sample_iou(std::span<const int> pred_point_mask, std::span<const double> confidences,
                  std::span<const int> gt_point_mask, bool gt_empty);
double sample_iou(const Prediction& pred, std::span<const int> gt_point_mask, bool gt_empty);

// Point mask covering the listed instances' superpoints.
std::vector<int> gt_point_mask(const SceneCloud& scene, std::span<const int> target_instances);

struct CategoryStats {
  double acc_025 = 0.0;
  double acc_05 = 0.0;
  std::size_t count = 0;
  friend bool operator==(const CategoryStats&, const CategoryStats&) = default;
};

struct EvalReport {
  double miou = 0.0;
  double acc_025 = 0.0;
  double acc_05 = 0.0;
  std::array<CategoryStats, kNumCategories> per_category{};
  std::size_t count = 0;
  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

struct ScoredSample {
  double iou;
  Category category;
};

// IoU threshold checks are strict (> k). Throws ArgumentError on an empty list.
EvalReport evaluate(std::span<const ScoredSample> samples);

struct EvalInput {
  const Prediction* prediction;
  const SceneCloud* scene;
  const Expression* expr;
};
EvalReport evaluate(std::span<const EvalInput> inputs);

nlohmann::ordered_json to_json(const EvalReport& r);

// Runs the model over the chosen split of a dataset and scores it.
EvalReport evaluate_dataset(const DatasetManifest& data, const ModelParams& params, const ModelConfig& cfg,
                            bool train_split);

}  // namespace gres
