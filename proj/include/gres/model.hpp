#pragma once

// Multi-query decoupled interaction network: point encoder and superpoint
// pooling, token embedding with component decoupling, text-driven sparse
// query selection, stacked query-superpoint / query-language aggregation
// layers, and the mask + confidence prediction head.

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "gres/geometry.hpp"
#include "gres/tape.hpp"
#include "gres/tensor.hpp"

namespace gres {

struct ModelConfig {
  std::size_t dim = 32;           // multimodal width D
  std::size_t point_dim = 32;     // D_P
  std::size_t point_hidden = 64;  // hidden width of the per-point encoder
  std::size_t text_dim = 32;      // D_T
  std::size_t contrast_dim = 32;  // C
  std::size_t layers = 6;
  std::size_t num_seeds = 256;
  std::size_t num_queries = 128;
  std::size_t vocab_size = 64;
  double tau = 0.1;
  double alpha = 1.0;
  double sigma = 1.0;

  // Throws ArgumentError on the first violated constraint.
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Longest accepted expression, in tokens.
inline constexpr std::size_t kMaxExpressionTokens = 80;

enum class Component { kMain, kAttribute, kAuxiliary, kPronoun, kRelation };
inline constexpr std::size_t kNumComponents = 5;

enum class Category { kZeroTargetDistractor, kZeroTargetNoDistractor, kSingleTargetDistractor,
                      kSingleTargetNoDistractor, kMultiTarget };
inline constexpr std::size_t kNumCategories = 5;

// zt_dis, zt_nodis, st_dis, st_nodis, mt
std::string_view category_tag(Category c);
// Throws DataError on an unknown tag.
Category parse_category(std::string_view tag);

struct Expression {
  std::vector<int> token_ids;
  // Token positions per component, indexed by Component.
  std::array<std::vector<int>, kNumComponents> labels;
  std::vector<int> target_instance_ids;
  Category category = Category::kZeroTargetNoDistractor;

  const std::vector<int>& label(Component c) const { return labels[static_cast<std::size_t>(c)]; }
  std::vector<int>& label(Component c) { return labels[static_cast<std::size_t>(c)]; }
  // Main, attribute and pronoun positions, ascending.
  std::vector<int> positive_word_positions() const;
  // Throws DataError when labels overlap, run out of range, or the category
  // disagrees with the target count.
  void validate() const;

  friend bool operator==(const Expression&, const Expression&) = default;
};

template <class T>
struct LinearT {
  T weight;
  T bias;
  friend bool operator==(const LinearT&, const LinearT&) = default;
};

template <class T>
struct DecoderLayerT {
  T w_sq, w_sk, w_sv;  // query-superpoint aggregation
  T w_qq, w_qk, w_qv;  // query self-attention
  T w_lq, w_lk;        // query-language attention
  std::array<LinearT<T>, 2> fusion;
  friend bool operator==(const DecoderLayerT&, const DecoderLayerT&) = default;
};

// Every learnable tensor. Instantiated with Tensor for storage and with
// ad::Var for a bound copy living on a tape.
template <class T>
struct ParamsT {
  T token_embedding;                     // vocab x D_T
  T w_text;                              // D_T x D
  std::array<LinearT<T>, 2> point_mlp;   // 6 -> hidden -> D_P
  T w_point;                             // D_P x D
  std::vector<DecoderLayerT<T>> layers;
  T w_mask;                              // D x D
  std::array<LinearT<T>, 2> confidence;  // D -> D -> 1
  T w_query_contrast;                    // D x C
  T w_word_contrast;                     // D x C

  friend bool operator==(const ParamsT&, const ParamsT&) = default;

  // Visits (name, tensor) in a fixed order; checkpoints and optimizers rely on it.
  template <class F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <class F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }

 private:
  template <class Self, class F>
  static void visit_impl(Self& self, F& f) {
    f(std::string("token_embedding"), self.token_embedding);
    f(std::string("w_text"), self.w_text);
    for (std::size_t i = 0; i < self.point_mlp.size(); ++i) {
      f("point_mlp." + std::to_string(i) + ".weight", self.point_mlp[i].weight);
      f("point_mlp." + std::to_string(i) + ".bias", self.point_mlp[i].bias);
    }
    f(std::string("w_point"), self.w_point);
    for (std::size_t l = 0; l < self.layers.size(); ++l) {
      auto& L = self.layers[l];
      const std::string p = "layers." + std::to_string(l) + ".";
      f(p + "w_sq", L.w_sq);
      f(p + "w_sk", L.w_sk);
      f(p + "w_sv", L.w_sv);
      f(p + "w_qq", L.w_qq);
      f(p + "w_qk", L.w_qk);
      f(p + "w_qv", L.w_qv);
      f(p + "w_lq", L.w_lq);
      f(p + "w_lk", L.w_lk);
      for (std::size_t i = 0; i < L.fusion.size(); ++i) {
        f(p + "fusion." + std::to_string(i) + ".weight", L.fusion[i].weight);
        f(p + "fusion." + std::to_string(i) + ".bias", L.fusion[i].bias);
      }
    }
    f(std::string("w_mask"), self.w_mask);
    for (std::size_t i = 0; i < self.confidence.size(); ++i) {
      f("confidence." + std::to_string(i) + ".weight", self.confidence[i].weight);
      f("confidence." + std::to_string(i) + ".bias", self.confidence[i].bias);
    }
    f(std::string("w_query_contrast"), self.w_query_contrast);
    f(std::string("w_word_contrast"), self.w_word_contrast);
  }
};

using ModelParams = ParamsT<Tensor>;
using BoundParams = ParamsT<ad::Var>;

// Zero-filled parameters with the shapes cfg implies.
ModelParams zero_params(const ModelConfig& cfg);
// Expected shape of every named tensor, in visit order.
std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> param_shapes(const ModelConfig& cfg);
std::size_t param_count(const ModelParams& params);

// Registers every tensor as a gradient-receiving leaf (or a constant).
BoundParams bind(ad::Tape& tape, const ModelParams& params, bool requires_grad = true);

// Scene inputs that do not depend on parameters.
struct SceneContext {
  const SceneCloud* scene = nullptr;
  Tensor point_inputs;  // N_P x 6: xyz, rgb
  std::vector<Vec3> centroids;
};
SceneContext make_scene_context(const SceneCloud& scene);

// T = embedding rows of token_ids times w_text.
ad::Var embed_text(const Expression& expr, const BoundParams& params, const ModelConfig& cfg);
// L . T for a binary position label: sum of the labelled rows (1 x D).
ad::Var decouple_component(ad::Var text, std::span<const int> positions);
// S = pool(MLP(xyz, rgb) * w_point).
ad::Var encode_points(const SceneContext& ctx, const BoundParams& params);

struct QuerySelection {
  ad::Var queries;                 // N_Q x D
  ad::Var relevance;               // N_seed x 1
  std::vector<int> seed_sources;   // superpoint per seed
  std::vector<int> query_seeds;    // seed rank per query, by descending relevance
  std::vector<int> query_sources;  // superpoint per query
};
QuerySelection tsq_select(ad::Var superpoints, std::span<const Vec3> centroids, ad::Var text,
                          const ModelConfig& cfg);

// Attention matrices produced during a forward pass, in execution order.
struct AttentionTrace {
  std::vector<Tensor> matrices;
};

ad::Var qsa_layer(ad::Var queries, ad::Var superpoints, const DecoderLayerT<ad::Var>& layer,
                  AttentionTrace* trace = nullptr);
ad::Var qla_layer(ad::Var scene_queries, ad::Var text, const DecoderLayerT<ad::Var>& layer,
                  AttentionTrace* trace = nullptr);

// Everything the loss terms need from one forward pass.
struct ForwardGraph {
  ad::Var superpoints;         // S, N_S x D
  ad::Var text;                // T, N_T x D
  QuerySelection selection;
  ad::Var queries;             // final-layer queries, N_Q x D
  ad::Var mask_logits;         // N_Q x N_S
  ad::Var confidence_logits;   // N_Q x 1
};
ForwardGraph forward_graph(ad::Tape& tape, const SceneContext& ctx, const Expression& expr,
                           const BoundParams& params, const ModelConfig& cfg,
                           AttentionTrace* trace = nullptr);

struct Prediction {
  Tensor mask_logits;               // N_Q x N_S
  std::vector<double> confidences;  // sigmoid of confidence logits
  std::vector<int> final_point_mask;
  std::vector<int> query_sources;
  std::vector<double> relevance;
  std::vector<int> seed_sources;

  friend bool operator==(const Prediction&, const Prediction&) = default;
};

// Union of the binarised masks of queries with confidence > 0.5, expanded to points.
std::vector<int> aggregate_point_mask(const Tensor& mask_logits, std::span<const double> confidences,
                                      const SceneCloud& scene);

Prediction to_prediction(const ForwardGraph& graph, const SceneCloud& scene);

Prediction forward(const SceneCloud& scene, const Expression& expr, const ModelParams& params,
                   const ModelConfig& cfg, AttentionTrace* trace = nullptr);

}  // namespace gres
