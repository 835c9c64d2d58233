#include "gres/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gres/errors.hpp"

namespace gres {

void LossWeights::validate() const {
  for (double v : {qgd, mask, tgt, qta}) {
    if (!std::isfinite(v) || v < 0.0) throw ArgumentError("loss weights must be finite and nonnegative");
  }
}

QueryAssignment assign_queries(std::span<const int> query_sources, std::span<const Vec3> centroids,
                               const SceneCloud& scene, const Expression& expr) {
  const auto owner = superpoint_majority_instance(scene);
  const std::size_t nq = query_sources.size();
  for (int src : query_sources) {
    if (src < 0 || static_cast<std::size_t>(src) >= owner.size())
      throw ArgumentError("query source " + std::to_string(src) + " is not a superpoint");
  }
  QueryAssignment out;
  out.target_labels.assign(nq, 0.0);
  out.positives.resize(expr.target_instance_ids.size());
  std::vector<std::vector<int>> served(nq);
  for (std::size_t t = 0; t < expr.target_instance_ids.size(); ++t) {
    const int inst = expr.target_instance_ids[t];
    if (inst < 0 || static_cast<std::size_t>(inst) >= scene.num_instances())
      throw ArgumentError("target instance " + std::to_string(inst) + " not in scene");
    for (std::size_t n = 0; n < nq; ++n)
      if (owner[query_sources[n]] == inst) out.positives[t].push_back(static_cast<int>(n));
    if (out.positives[t].empty() && nq > 0) {
      std::size_t best = 0;
      double best_d2 = squared_distance(centroids[query_sources[0]], scene.instance_center[inst]);
      for (std::size_t n = 1; n < nq; ++n) {
        const double d2 = squared_distance(centroids[query_sources[n]], scene.instance_center[inst]);
        if (d2 < best_d2) {
          best = n;
          best_d2 = d2;
        }
      }
      out.positives[t].push_back(static_cast<int>(best));
    }
    for (int n : out.positives[t]) served[n].push_back(inst);
  }
  for (std::size_t n = 0; n < nq; ++n) {
    if (served[n].empty()) continue;
    out.target_labels[n] = 1.0;
    out.positive_queries.push_back(static_cast<int>(n));
    SuperpointMask m;
    m.values.assign(scene.num_superpoints, 0.0);
    for (int inst : served[n]) {
      const SuperpointMask mi = instance_superpoint_mask(scene, inst);
      for (std::size_t s = 0; s < m.values.size(); ++s) m.values[s] = std::max(m.values[s], mi.values[s]);
    }
    out.positive_masks.push_back(std::move(m));
  }
  return out;
}

ad::Var loss_qgd(ad::Var relevance, std::span<const double> labels) {
  if (labels.size() != relevance.value().size())
    throw ArgumentError("loss_qgd: one label per seed required");
  Tensor t(relevance.rows(), relevance.cols(), std::vector<double>(labels.begin(), labels.end()));
  return ad::bce_with_logits(relevance, t);
}

ad::Var loss_mask(ad::Var mask_logits, const QueryAssignment& assignment) {
  ad::Tape& tape = *mask_logits.tape();
  if (assignment.positive_queries.empty()) return tape.constant(Tensor::scalar(0.0));
  const std::size_t ns = mask_logits.cols();
  Tensor targets(assignment.positive_queries.size(), ns);
  for (std::size_t i = 0; i < assignment.positive_masks.size(); ++i) {
    const auto& v = assignment.positive_masks[i].values;
    if (v.size() != ns) throw ArgumentError("loss_mask: mask length differs from superpoint count");
    std::copy(v.begin(), v.end(), targets.row(i).begin());
  }
  const ad::Var rows = ad::gather_rows(mask_logits, assignment.positive_queries);
  // BCE mean over all entries equals the mean over queries of per-query means.
  const std::array<ad::Var, 2> terms{ad::bce_with_logits(rows, targets), ad::dice_loss_rows(rows, targets, 1.0)};
  const std::array<double, 2> ones{1.0, 1.0};
  return ad::linear_combination(terms, ones);
}

ad::Var loss_tgt(ad::Var confidence_logits, std::span<const double> target_labels) {
  if (target_labels.size() != confidence_logits.value().size())
    throw ArgumentError("loss_tgt: one label per query required");
  Tensor t(confidence_logits.rows(), confidence_logits.cols(),
           std::vector<double>(target_labels.begin(), target_labels.end()));
  return ad::bce_with_logits(confidence_logits, t);
}

ad::Var loss_qta(ad::Var queries, ad::Var text, ad::Var w_query, ad::Var w_word,
                 std::span<const int> positive_words, std::span<const int> positive_queries,
                 double tau) {
  if (!(tau > 0.0)) throw ArgumentError("loss_qta: tau must be positive");
  const std::size_t nq = queries.rows();
  const std::size_t nt = text.rows();
  for (int w : positive_words)
    if (w < 0 || static_cast<std::size_t>(w) >= nt) throw ArgumentError("loss_qta: word index out of range");
  for (int q : positive_queries)
    if (q < 0 || static_cast<std::size_t>(q) >= nq) throw ArgumentError("loss_qta: query index out of range");

  const ad::Var q = ad::matmul(queries, w_query);
  const ad::Var t = ad::matmul(text, w_word);
  const ad::Var logits = ad::scale(ad::matmul_nt(q, t), 1.0 / tau);  // N_Q x N_T

  // Query->word: each positive query averages -log p(word | query) over the
  // positive words. Word->query: each positive word averages over the
  // positive queries. Empty sets contribute nothing.
  Tensor w_qw(nq, nt);
  Tensor w_wq(nt, nq);
  if (!positive_words.empty() && !positive_queries.empty()) {
    const double inv_words = 1.0 / static_cast<double>(positive_words.size());
    const double inv_queries = 1.0 / static_cast<double>(positive_queries.size());
    for (int qi : positive_queries) {
      for (int wi : positive_words) {
        w_qw(qi, wi) -= inv_words;
        w_wq(wi, qi) -= inv_queries;
      }
    }
  }
  const std::array<ad::Var, 2> terms{ad::weighted_sum(ad::log_softmax_rows(logits), w_qw),
                                     ad::weighted_sum(ad::log_softmax_rows(ad::transpose(logits)), w_wq)};
  const std::array<double, 2> ones{1.0, 1.0};
  return ad::linear_combination(terms, ones);
}

ad::Var total_loss(const LossComponents& c, const LossWeights& w) {
  w.validate();
  const std::array<ad::Var, 4> terms{c.qgd, c.mask, c.tgt, c.qta};
  const std::array<double, 4> coeffs{w.qgd, w.mask, w.tgt, w.qta};
  return ad::linear_combination(terms, coeffs);
}

SampleLoss sample_loss(const ForwardGraph& graph, const SceneContext& ctx, const Expression& expr,
                       const BoundParams& params, const ModelConfig& cfg, const LossWeights& w) {
  const SceneCloud& scene = *ctx.scene;
  const auto& sel = graph.selection;
  SampleLoss out;

  std::vector<Vec3> seed_positions;
  seed_positions.reserve(sel.seed_sources.size());
  for (int s : sel.seed_sources) seed_positions.push_back(ctx.centroids[s]);
  const auto relevance_labels = gaussian_relevance_labels(seed_positions, sel.seed_sources, scene,
                                                          expr.target_instance_ids, cfg.alpha, cfg.sigma);
  out.components.qgd = loss_qgd(sel.relevance, relevance_labels);

  out.assignment = assign_queries(sel.query_sources, ctx.centroids, scene, expr);
  out.components.mask = loss_mask(graph.mask_logits, out.assignment);
  out.components.tgt = loss_tgt(graph.confidence_logits, out.assignment.target_labels);
  out.components.qta = loss_qta(graph.queries, graph.text, params.w_query_contrast, params.w_word_contrast,
                                expr.positive_word_positions(), out.assignment.positive_queries, cfg.tau);
  out.total = total_loss(out.components, w);
  return out;
}

}  // namespace gres
