#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>

#include "doctest.h"
#include "gres/errors.hpp"
#include "gres/gradcheck.hpp"
#include "gres/trainer.hpp"

using namespace gres;
namespace fs = std::filesystem;

namespace {

std::string load_error(const fs::path& p) {
  try {
    load_checkpoint(p);
  } catch (const FormatError& e) {
    return e.what();
  }
  return "";
}

double max_abs_diff(const ModelParams& a, const ModelParams& b) {
  std::vector<const Tensor*> bs;
  b.visit([&](const std::string&, const Tensor& t) { bs.push_back(&t); });
  double d = 0.0;
  std::size_t i = 0;
  a.visit([&](const std::string&, const Tensor& t) {
    for (std::size_t j = 0; j < t.size(); ++j) d = std::max(d, std::abs(t.values()[j] - bs[i]->values()[j]));
    ++i;
  });
  return d;
}

DatasetManifest small_dataset() {
  GenConfig g;
  g.num_scenes = 2;
  g.samples_per_scene = 3;
  g.val_fraction = 0.0;
  return generate_dataset(g);
}

ModelConfig small_model(std::size_t vocab) {
  ModelConfig m;
  m.dim = 8;
  m.layers = 1;
  m.num_seeds = 8;
  m.num_queries = 4;
  m.vocab_size = vocab;
  return m;
}

}  // namespace

TEST_CASE("poly learning rate") {
  TrainConfig cfg;
  cfg.base_lr = 1e-3;
  cfg.total_steps = 100;
  CHECK(poly_lr(0, cfg) == 1e-3);
  CHECK(poly_lr(50, cfg) == doctest::Approx(1e-3 * 0.0625).epsilon(1e-12));
  CHECK(poly_lr(100, cfg) == 0.0);
  for (std::size_t s = 1; s <= 100; ++s) CHECK(poly_lr(s, cfg) <= poly_lr(s - 1, cfg));
  CHECK_THROWS_AS(poly_lr(101, cfg), ArgumentError);

  cfg.total_steps = 0;
  CHECK_THROWS_AS(cfg.validate(), ArgumentError);
  cfg.total_steps = 10;
  cfg.base_lr = -1;
  CHECK_THROWS_AS(cfg.validate(), ArgumentError);
}

TEST_CASE("init statistics") {
  ModelConfig cfg = small_model(40);
  cfg.dim = 32;
  Rng rng(5);
  const ModelParams p = init_params(cfg, rng);
  Rng rng2(5);
  CHECK(p == init_params(cfg, rng2));
  double sum = 0.0, sq = 0.0;
  for (double v : p.token_embedding.values()) {
    sum += v;
    sq += v * v;
  }
  const double n = static_cast<double>(p.token_embedding.size());
  CHECK(std::abs(sum / n) < 0.005);
  CHECK(std::sqrt(sq / n) == doctest::Approx(0.02).epsilon(0.1));
}

TEST_CASE("zero loss weights leave parameters fixed") {
  TinyProblem tp = make_tiny_problem(1);
  const SceneContext ctx = make_scene_context(tp.scene);
  const BatchItem item{&ctx, &tp.expr};
  TrainConfig t;
  t.weights = {0.0, 0.0, 0.0, 0.0};
  t.total_steps = 10;
  ModelParams p = tp.params;
  AdamState st = make_adam_state(p);
  for (int i = 0; i < 5; ++i) {
    const StepResult r = train_step({&item, 1}, p, st, tp.cfg, t);
    CHECK(r.loss == 0.0);
    CHECK(r.grad_norm == 0.0);
  }
  CHECK(p == tp.params);
  CHECK(st.step == 5);
}

TEST_CASE("repeated sample loss decreases") {
  TinyProblem tp = make_tiny_problem(2);
  const SceneContext ctx = make_scene_context(tp.scene);
  const BatchItem item{&ctx, &tp.expr};
  TrainConfig t;
  t.base_lr = 1e-2;
  t.total_steps = 50;
  ModelParams p = tp.params;
  AdamState st = make_adam_state(p);
  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < t.total_steps; ++i) {
    const StepResult r = train_step({&item, 1}, p, st, tp.cfg, t);
    if (i == 0) first = r.loss;
    last = r.loss;
  }
  CHECK(last < first);
}

TEST_CASE("first Adam step is bounded by the learning rate") {
  TinyProblem tp = make_tiny_problem(3);
  const SceneContext ctx = make_scene_context(tp.scene);
  const BatchItem item{&ctx, &tp.expr};
  TrainConfig t;
  t.base_lr = 1e-3;
  ModelParams p = tp.params;
  AdamState st = make_adam_state(p);
  const StepResult r = train_step({&item, 1}, p, st, tp.cfg, t);
  CHECK(r.grad_norm > 0.0);
  CHECK(max_abs_diff(p, tp.params) <= 1e-3 * (1 + 1e-9));
}

TEST_CASE("non-finite values raise TrainingError") {
  TinyProblem tp = make_tiny_problem(1);
  const SceneContext ctx = make_scene_context(tp.scene);
  const BatchItem item{&ctx, &tp.expr};
  ModelParams p = tp.params;
  for (auto& v : p.token_embedding.values()) v = std::numeric_limits<double>::quiet_NaN();
  AdamState st = make_adam_state(p);
  TrainConfig t;
  CHECK_THROWS_AS(train_step({&item, 1}, p, st, tp.cfg, t), TrainingError);
}

TEST_CASE("fit is deterministic") {
  const DatasetManifest data = small_dataset();
  const ModelConfig m = small_model(data.vocab.size());
  TrainConfig t;
  t.total_steps = 6;
  t.batch_size = 2;
  t.base_lr = 1e-3;
  std::vector<double> losses;
  FitOptions opts;
  opts.on_step = [&](std::size_t, const StepResult& r) { losses.push_back(r.loss); };
  const Checkpoint a = fit(data, m, t, opts);
  const Checkpoint b = fit(data, m, t);
  CHECK(a == b);
  CHECK(a.step == 6);
  CHECK(losses.size() == 6);
  TrainConfig other = t;
  other.seed = 1;
  CHECK_FALSE(fit(data, m, other) == a);

  ModelConfig tiny_vocab = m;
  tiny_vocab.vocab_size = 3;
  CHECK_THROWS_AS(fit(data, tiny_vocab, t), ArgumentError);
}

TEST_CASE("checkpoint round trip and errors") {
  const fs::path dir = fs::temp_directory_path() / "gres_test_ckpt";
  fs::remove_all(dir);
  fs::create_directories(dir);

  Checkpoint c;
  c.model = small_model(30);
  Rng rng(7);
  c.params = init_params(c.model, rng);
  c.step = 12;
  c.rng_state = rng.state();
  const fs::path path = dir / "a.ckpt";
  save_checkpoint(c, path);
  CHECK(load_checkpoint(path) == c);

  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  std::string bad = bytes;
  bad[0] = 'X';
  { std::ofstream(dir / "magic.ckpt", std::ios::binary) << bad; }
  CHECK(load_error(dir / "magic.ckpt").find("bad header") != std::string::npos);

  { std::ofstream(dir / "short.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() - 8); }
  CHECK(load_error(dir / "short.ckpt").find("truncated") != std::string::npos);

  // A header whose model config disagrees with the stored tensors.
  Checkpoint wide = c;
  wide.model.dim = 16;
  save_checkpoint(wide, dir / "shape.ckpt");
  CHECK(load_error(dir / "shape.ckpt").find("has shape") != std::string::npos);

  Checkpoint deep = c;
  deep.model.layers = 2;
  save_checkpoint(deep, dir / "missing.ckpt");
  CHECK(load_error(dir / "missing.ckpt").find("missing tensor") != std::string::npos);

  Checkpoint shallow;
  shallow.model = small_model(30);
  shallow.model.layers = 2;
  shallow.params = init_params(shallow.model, rng);
  shallow.model.layers = 1;
  save_checkpoint(shallow, dir / "extra.ckpt");
  CHECK(load_error(dir / "extra.ckpt").find("extra") != std::string::npos);

  CHECK(load_error(dir / "nope.ckpt").find("cannot open") != std::string::npos);
  fs::remove_all(dir);
}
