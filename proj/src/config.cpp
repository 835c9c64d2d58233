#include "gres/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "gres/errors.hpp"

namespace gres {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

// Applies known keys from j; any other key is an error.
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw FormatError(where_ + ": expected a JSON object");
  }
  // Call after the last get(); rejects keys nobody asked for.
  void done() const {
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) throw FormatError(where_ + ": unknown key '" + key + "'");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw FormatError(where_ + ": key '" + std::string(key) + "' has the wrong type");
    }
  }
  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace

ordered_json to_json(const ModelConfig& c) {
  return {{"dim", c.dim},           {"point_dim", c.point_dim},   {"point_hidden", c.point_hidden},
          {"text_dim", c.text_dim}, {"contrast_dim", c.contrast_dim}, {"layers", c.layers},
          {"num_seeds", c.num_seeds}, {"num_queries", c.num_queries}, {"vocab_size", c.vocab_size},
          {"tau", c.tau},           {"alpha", c.alpha},           {"sigma", c.sigma}};
}

ModelConfig model_config_from_json(const json& j, ModelConfig c) {
  Reader r(j, "model config");
  r.get("dim", c.dim);
  r.get("point_dim", c.point_dim);
  r.get("point_hidden", c.point_hidden);
  r.get("text_dim", c.text_dim);
  r.get("contrast_dim", c.contrast_dim);
  r.get("layers", c.layers);
  r.get("num_seeds", c.num_seeds);
  r.get("num_queries", c.num_queries);
  r.get("vocab_size", c.vocab_size);
  r.get("tau", c.tau);
  r.get("alpha", c.alpha);
  r.get("sigma", c.sigma);
  r.done();
  return c;
}

ordered_json to_json(const GenConfig& c) {
  return {{"seed", c.seed},
          {"num_scenes", c.num_scenes},
          {"instances_min", c.instances_min},
          {"instances_max", c.instances_max},
          {"classes", c.classes},
          {"points_per_instance_min", c.points_per_instance_min},
          {"points_per_instance_max", c.points_per_instance_max},
          {"floor_points", c.floor_points},
          {"room_extent", c.room_extent},
          {"grid_pitch", c.grid_pitch},
          {"floor_pitch", c.floor_pitch},
          {"samples_per_scene", c.samples_per_scene},
          {"category_mix", c.category_mix},
          {"val_fraction", c.val_fraction},
          {"max_placement_attempts", c.max_placement_attempts}};
}

GenConfig gen_config_from_json(const json& j, GenConfig c) {
  Reader r(j, "gen config");
  r.get("seed", c.seed);
  r.get("num_scenes", c.num_scenes);
  r.get("instances_min", c.instances_min);
  r.get("instances_max", c.instances_max);
  r.get("classes", c.classes);
  r.get("points_per_instance_min", c.points_per_instance_min);
  r.get("points_per_instance_max", c.points_per_instance_max);
  r.get("floor_points", c.floor_points);
  r.get("room_extent", c.room_extent);
  r.get("grid_pitch", c.grid_pitch);
  r.get("floor_pitch", c.floor_pitch);
  r.get("samples_per_scene", c.samples_per_scene);
  r.get("category_mix", c.category_mix);
  r.get("val_fraction", c.val_fraction);
  r.get("max_placement_attempts", c.max_placement_attempts);
  r.done();
  return c;
}

ordered_json to_json(const LossWeights& w) {
  return {{"qgd", w.qgd}, {"mask", w.mask}, {"tgt", w.tgt}, {"qta", w.qta}};
}

LossWeights loss_weights_from_json(const json& j, LossWeights w) {
  Reader r(j, "loss weights");
  r.get("qgd", w.qgd);
  r.get("mask", w.mask);
  r.get("tgt", w.tgt);
  r.get("qta", w.qta);
  r.done();
  return w;
}

ordered_json to_json(const TrainConfig& c) {
  return {{"base_lr", c.base_lr},       {"total_steps", c.total_steps}, {"poly_power", c.poly_power},
          {"batch_size", c.batch_size}, {"seed", c.seed},               {"beta1", c.beta1},
          {"beta2", c.beta2},           {"adam_eps", c.adam_eps},       {"clip_norm", c.clip_norm}};
}

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
  Reader r(j, "train config");
  r.get("base_lr", c.base_lr);
  r.get("total_steps", c.total_steps);
  r.get("poly_power", c.poly_power);
  r.get("batch_size", c.batch_size);
  r.get("seed", c.seed);
  r.get("beta1", c.beta1);
  r.get("beta2", c.beta2);
  r.get("adam_eps", c.adam_eps);
  r.get("clip_norm", c.clip_norm);
  r.done();
  return c;
}

RunConfig run_config_from_json(const json& j, RunConfig c) {
  Reader r(j, "run config");
  if (const json* g = r.child("gen")) c.gen = gen_config_from_json(*g, c.gen);
  if (const json* m = r.child("model")) c.model = model_config_from_json(*m, c.model);
  if (const json* t = r.child("train")) c.train = train_config_from_json(*t, c.train);
  if (const json* w = r.child("loss_weights")) c.train.weights = loss_weights_from_json(*w, c.train.weights);
  r.done();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  json j;
  try {
    j = json::parse(buf.str());
  } catch (const json::parse_error& e) {
    throw FormatError("malformed JSON in " + path.string() + ": " + e.what());
  }
  return run_config_from_json(j, std::move(base));
}

ordered_json to_json(const RunConfig& c) {
  return {{"gen", to_json(c.gen)},
          {"model", to_json(c.model)},
          {"train", to_json(c.train)},
          {"loss_weights", to_json(c.train.weights)}};
}

RunConfig default_run_config() {
  RunConfig c;
  c.model.dim = 32;
  c.model.point_dim = 32;
  c.model.text_dim = 32;
  c.model.contrast_dim = 32;
  c.model.layers = 3;
  c.model.num_seeds = 16;
  c.model.num_queries = 8;
  c.model.vocab_size = 64;
  c.train.total_steps = 2000;
  c.train.batch_size = 4;
  return c;
}

}  // namespace gres
