#include "gres/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "gres/errors.hpp"

namespace gres {

void ModelConfig::validate() const {
  if (dim == 0 || point_dim == 0 || point_hidden == 0 || text_dim == 0 || contrast_dim == 0)
    throw ArgumentError("model widths must be positive");
  if (layers < 1) throw ArgumentError("model needs at least one decoder layer");
  if (num_queries < 1) throw ArgumentError("num_queries must be at least 1");
  if (num_queries > num_seeds) throw ArgumentError("num_queries exceeds num_seeds");
  if (vocab_size == 0) throw ArgumentError("vocab_size must be positive");
  if (!(tau > 0.0)) throw ArgumentError("tau must be positive");
  if (!(alpha > 0.0) || !(sigma > 0.0)) throw ArgumentError("alpha and sigma must be positive");
}

std::string_view category_tag(Category c) {
  switch (c) {
    case Category::kZeroTargetDistractor: return "zt_dis";
    case Category::kZeroTargetNoDistractor: return "zt_nodis";
    case Category::kSingleTargetDistractor: return "st_dis";
    case Category::kSingleTargetNoDistractor: return "st_nodis";
    case Category::kMultiTarget: return "mt";
  }
  return "";
}

Category parse_category(std::string_view tag) {
  for (std::size_t i = 0; i < kNumCategories; ++i) {
    const auto c = static_cast<Category>(i);
    if (category_tag(c) == tag) return c;
  }
  throw DataError("unknown category tag '" + std::string(tag) + "'");
}

std::vector<int> Expression::positive_word_positions() const {
  std::vector<int> out;
  for (Component c : {Component::kMain, Component::kAttribute, Component::kPronoun}) {
    out.insert(out.end(), label(c).begin(), label(c).end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

void Expression::validate() const {
  if (token_ids.empty()) throw DataError("expression has no tokens");
  if (token_ids.size() > kMaxExpressionTokens)
    throw DataError("expression has " + std::to_string(token_ids.size()) + " tokens, limit is " +
                    std::to_string(kMaxExpressionTokens));
  std::set<int> used;
  for (const auto& positions : labels) {
    for (int p : positions) {
      if (p < 0 || p >= static_cast<int>(token_ids.size()))
        throw DataError("label position " + std::to_string(p) + " outside the expression");
      if (!used.insert(p).second) throw DataError("label position " + std::to_string(p) + " used twice");
    }
  }
  const std::size_t n = target_instance_ids.size();
  const bool ok = [&] {
    switch (category) {
      case Category::kZeroTargetDistractor:
      case Category::kZeroTargetNoDistractor: return n == 0;
      case Category::kSingleTargetDistractor:
      case Category::kSingleTargetNoDistractor: return n == 1;
      case Category::kMultiTarget: return n >= 2;
    }
    return false;
  }();
  if (!ok) {
    throw DataError("category " + std::string(category_tag(category)) + " with " + std::to_string(n) +
                    " targets");
  }
}

std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> param_shapes(const ModelConfig& cfg) {
  std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> out;
  zero_params(cfg).visit([&](const std::string& name, const Tensor& t) {
    out.emplace_back(name, std::make_pair(t.rows(), t.cols()));
  });
  return out;
}

ModelParams zero_params(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.dim;
  ModelParams p;
  p.token_embedding = Tensor(cfg.vocab_size, cfg.text_dim);
  p.w_text = Tensor(cfg.text_dim, d);
  p.point_mlp[0] = {Tensor(6, cfg.point_hidden), Tensor(1, cfg.point_hidden)};
  p.point_mlp[1] = {Tensor(cfg.point_hidden, cfg.point_dim), Tensor(1, cfg.point_dim)};
  p.w_point = Tensor(cfg.point_dim, d);
  p.layers.resize(cfg.layers);
  for (auto& L : p.layers) {
    for (Tensor* w : {&L.w_sq, &L.w_sk, &L.w_sv, &L.w_qq, &L.w_qk, &L.w_qv, &L.w_lq, &L.w_lk}) *w = Tensor(d, d);
    L.fusion[0] = {Tensor(d, d), Tensor(1, d)};
    L.fusion[1] = {Tensor(d, d), Tensor(1, d)};
  }
  p.w_mask = Tensor(d, d);
  p.confidence[0] = {Tensor(d, d), Tensor(1, d)};
  p.confidence[1] = {Tensor(d, 1), Tensor(1, 1)};
  p.w_query_contrast = Tensor(d, cfg.contrast_dim);
  p.w_word_contrast = Tensor(d, cfg.contrast_dim);
  return p;
}

std::size_t param_count(const ModelParams& params) {
  std::size_t n = 0;
  params.visit([&](const std::string&, const Tensor& t) { n += t.size(); });
  return n;
}

BoundParams bind(ad::Tape& tape, const ModelParams& params, bool requires_grad) {
  BoundParams out;
  out.layers.resize(params.layers.size());
  // Two parallel walks in the same order pair each Tensor with its Var slot.
  std::vector<ad::Var*> slots;
  out.visit([&](const std::string&, ad::Var& v) { slots.push_back(&v); });
  std::size_t i = 0;
  params.visit([&](const std::string&, const Tensor& t) {
    *slots[i++] = requires_grad ? tape.parameter(t) : tape.constant(t);
  });
  return out;
}

SceneContext make_scene_context(const SceneCloud& scene) {
  scene.validate();
  SceneContext ctx;
  ctx.scene = &scene;
  ctx.point_inputs = Tensor(scene.num_points(), 6);
  for (std::size_t p = 0; p < scene.num_points(); ++p) {
    for (int c = 0; c < 3; ++c) {
      ctx.point_inputs(p, c) = scene.positions[p][c];
      ctx.point_inputs(p, 3 + c) = scene.colors[p][c];
    }
  }
  ctx.centroids = superpoint_centroids(scene);
  return ctx;
}

ad::Var embed_text(const Expression& expr, const BoundParams& params, const ModelConfig& cfg) {
  for (int id : expr.token_ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab_size)
      throw ArgumentError("token id " + std::to_string(id) + " outside vocabulary of " +
                          std::to_string(cfg.vocab_size));
  }
  const ad::Var rows = ad::gather_rows(params.token_embedding, expr.token_ids);
  return ad::matmul(rows, params.w_text);
}

ad::Var decouple_component(ad::Var text, std::span<const int> positions) {
  Tensor label(1, text.rows());
  for (int p : positions) {
    if (p < 0 || static_cast<std::size_t>(p) >= text.rows())
      throw ArgumentError("component position " + std::to_string(p) + " out of range");
    label(0, p) = 1.0;
  }
  return ad::matmul(text.tape()->constant(std::move(label)), text);
}

ad::Var encode_points(const SceneContext& ctx, const BoundParams& params) {
  ad::Tape& tape = *params.w_point.tape();
  const ad::Var x = tape.constant(ctx.point_inputs);
  const std::array<ad::LinearVars, 2> mlp{{{params.point_mlp[0].weight, params.point_mlp[0].bias},
                                           {params.point_mlp[1].weight, params.point_mlp[1].bias}}};
  const ad::Var features = ad::mlp_forward(x, mlp);
  const ad::Var projected = ad::matmul(features, params.w_point);
  return ad::segment_mean(projected, ctx.scene->superpoint_id, ctx.scene->num_superpoints);
}

QuerySelection tsq_select(ad::Var superpoints, std::span<const Vec3> centroids, ad::Var text,
                          const ModelConfig& cfg) {
  cfg.validate();
  if (centroids.size() != superpoints.rows())
    throw ArgumentError("tsq_select: centroid count differs from superpoint count");
  if (cfg.num_seeds > superpoints.rows())
    throw ArgumentError("tsq_select: num_seeds " + std::to_string(cfg.num_seeds) + " exceeds " +
                        std::to_string(superpoints.rows()) + " superpoints");
  QuerySelection out;
  out.seed_sources = fss(centroids, cfg.num_seeds);
  const ad::Var seeds = ad::gather_rows(superpoints, out.seed_sources);
  out.relevance = ad::mean_cols(ad::matmul_nt(seeds, text));

  const Tensor& r = out.relevance.value();
  std::vector<int> order(cfg.num_seeds);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return r(a, 0) > r(b, 0); });
  out.query_seeds.assign(order.begin(), order.begin() + static_cast<long>(cfg.num_queries));
  for (int s : out.query_seeds) out.query_sources.push_back(out.seed_sources[s]);
  out.queries = ad::gather_rows(seeds, out.query_seeds);
  return out;
}

namespace {

ad::Var attention(ad::Var q, ad::Var k, double inv_sqrt_d, AttentionTrace* trace) {
  ad::Var a = ad::softmax_rows(ad::scale(ad::matmul_nt(q, k), inv_sqrt_d));
  if (trace) trace->matrices.push_back(a.value());
  return a;
}

}  // namespace

ad::Var qsa_layer(ad::Var queries, ad::Var superpoints, const DecoderLayerT<ad::Var>& layer,
                  AttentionTrace* trace) {
  if (queries.cols() != superpoints.cols()) throw ArgumentError("qsa_layer: width mismatch");
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(queries.cols()));
  const ad::Var a = attention(ad::matmul(queries, layer.w_sq), ad::matmul(superpoints, layer.w_sk),
                              inv_sqrt_d, trace);
  return ad::matmul(a, ad::matmul(superpoints, layer.w_sv));
}

ad::Var qla_layer(ad::Var scene_queries, ad::Var text, const DecoderLayerT<ad::Var>& layer,
                  AttentionTrace* trace) {
  if (scene_queries.cols() != text.cols()) throw ArgumentError("qla_layer: width mismatch");
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(scene_queries.cols()));
  const ad::Var self_attn = attention(ad::matmul(scene_queries, layer.w_qq),
                                      ad::matmul(scene_queries, layer.w_qk), inv_sqrt_d, trace);
  const ad::Var relation = ad::matmul(self_attn, ad::matmul(scene_queries, layer.w_qv));
  const ad::Var lang_attn = attention(ad::matmul(scene_queries, layer.w_lq),
                                      ad::matmul(text, layer.w_lk), inv_sqrt_d, trace);
  const ad::Var language = ad::matmul(lang_attn, text);
  const std::array<ad::LinearVars, 2> mlp{{{layer.fusion[0].weight, layer.fusion[0].bias},
                                           {layer.fusion[1].weight, layer.fusion[1].bias}}};
  return ad::mlp_forward(ad::add(ad::add(scene_queries, relation), language), mlp);
}

ForwardGraph forward_graph(ad::Tape& tape, const SceneContext& ctx, const Expression& expr,
                           const BoundParams& params, const ModelConfig& cfg, AttentionTrace* trace) {
  (void)tape;
  if (params.layers.size() != cfg.layers) throw ArgumentError("parameter layer count differs from config");
  ForwardGraph g;
  g.superpoints = encode_points(ctx, params);
  g.text = embed_text(expr, params, cfg);
  g.selection = tsq_select(g.superpoints, ctx.centroids, g.text, cfg);
  ad::Var q = g.selection.queries;
  for (const auto& layer : params.layers) {
    q = qla_layer(qsa_layer(q, g.superpoints, layer, trace), g.text, layer, trace);
  }
  g.queries = q;
  const ad::Var mask_features = ad::matmul(g.superpoints, params.w_mask);
  g.mask_logits = ad::matmul_nt(q, mask_features);
  const std::array<ad::LinearVars, 2> head{{{params.confidence[0].weight, params.confidence[0].bias},
                                            {params.confidence[1].weight, params.confidence[1].bias}}};
  g.confidence_logits = ad::mlp_forward(q, head);
  return g;
}

std::vector<int> aggregate_point_mask(const Tensor& mask_logits, std::span<const double> confidences,
                                      const SceneCloud& scene) {
  if (mask_logits.rows() != confidences.size())
    throw ArgumentError("aggregate_point_mask: one confidence per query required");
  std::vector<int> sp_mask(mask_logits.cols(), 0);
  for (std::size_t n = 0; n < mask_logits.rows(); ++n) {
    if (!(confidences[n] > 0.5)) continue;
    for (std::size_t s = 0; s < mask_logits.cols(); ++s)
      if (mask_logits(n, s) > 0.0) sp_mask[s] = 1;
  }
  return expand_mask_to_points(sp_mask, scene);
}

Prediction to_prediction(const ForwardGraph& graph, const SceneCloud& scene) {
  Prediction p;
  p.mask_logits = graph.mask_logits.value();
  const Tensor& c = graph.confidence_logits.value();
  p.confidences.resize(c.rows());
  for (std::size_t n = 0; n < c.rows(); ++n) {
    const double z = c(n, 0);
    p.confidences[n] = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  }
  p.final_point_mask = aggregate_point_mask(p.mask_logits, p.confidences, scene);
  p.query_sources = graph.selection.query_sources;
  p.seed_sources = graph.selection.seed_sources;
  const Tensor& r = graph.selection.relevance.value();
  p.relevance.assign(r.values().begin(), r.values().end());
  return p;
}

Prediction forward(const SceneCloud& scene, const Expression& expr, const ModelParams& params,
                   const ModelConfig& cfg, AttentionTrace* trace) {
  const SceneContext ctx = make_scene_context(scene);
  ad::Tape tape;
  const BoundParams bound = bind(tape, params, false);
  const ForwardGraph g = forward_graph(tape, ctx, expr, bound, cfg, trace);
  return to_prediction(g, scene);
}

}  // namespace gres
