#pragma once

// Multi-object decoupling objectives. Every query inherits an instance from
// the superpoint it was sampled from; that provenance drives the mask,
// target-confidence and query-text supervision without bipartite matching.

#include <cstddef>
#include <vector>

#include "gres/geometry.hpp"
#include "gres/model.hpp"
#include "gres/tape.hpp"

namespace gres {

struct LossWeights {
  double qgd = 5.0;
  double mask = 1.0;
  double tgt = 0.1;
  double qta = 0.1;

  void validate() const;
  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

struct QueryAssignment {
  // positives[t] = query indices supervised by target t (same order as the
  // expression's target list).
  std::vector<std::vector<int>> positives;
  std::vector<double> target_labels;  // L^tgt, one per query
  // Query indices with target_labels == 1, ascending, and their superpoint
  // masks (union over the targets the query serves).
  std::vector<int> positive_queries;
  std::vector<SuperpointMask> positive_masks;
};

// Queries homed in a target instance are its positives; a target without
// any gets the single query whose source centroid is nearest its center.
QueryAssignment assign_queries(std::span<const int> query_sources, std::span<const Vec3> centroids,
                               const SceneCloud& scene, const Expression& expr);

// Mean BCE-with-logits of relevance scores against soft labels.
ad::Var loss_qgd(ad::Var relevance, std::span<const double> labels);

// BCE + Dice (eps 1) per positive query, mean over positives. 1x1 zero when
// there are none.
ad::Var loss_mask(ad::Var mask_logits, const QueryAssignment& assignment);

// Mean BCE-with-logits of confidence logits against L^tgt.
ad::Var loss_tgt(ad::Var confidence_logits, std::span<const double> target_labels);

// Query-to-word plus word-to-query contrastive terms over the positive pairs
// (positive queries x positive words) with temperature tau.
ad::Var loss_qta(ad::Var queries, ad::Var text, ad::Var w_query, ad::Var w_word,
                 std::span<const int> positive_words, std::span<const int> positive_queries,
                 double tau);

struct LossComponents {
  ad::Var qgd, mask, tgt, qta;
};

ad::Var total_loss(const LossComponents& c, const LossWeights& w);

struct SampleLoss {
  LossComponents components;
  ad::Var total;
  QueryAssignment assignment;
};

// Full objective for one (scene, expression) pair on an existing forward graph.
SampleLoss sample_loss(const ForwardGraph& graph, const SceneContext& ctx, const Expression& expr,
                       const BoundParams& params, const ModelConfig& cfg, const LossWeights& w);

}  // namespace gres
