#include "gres/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "gres/config.hpp"
#include "gres/errors.hpp"
#include "gres/simd/kernels.hpp"

namespace gres {

void TrainConfig::validate() const {
  if (total_steps < 1) throw ArgumentError("total_steps must be at least 1");
  if (!(base_lr > 0.0)) throw ArgumentError("base_lr must be positive");
  if (batch_size < 1) throw ArgumentError("batch_size must be at least 1");
  if (!(poly_power >= 0.0)) throw ArgumentError("poly_power must be nonnegative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ArgumentError("Adam betas outside [0, 1)");
  if (!(adam_eps > 0.0)) throw ArgumentError("adam_eps must be positive");
  weights.validate();
}

double poly_lr(std::size_t step, const TrainConfig& cfg) {
  if (cfg.total_steps == 0) throw ArgumentError("total_steps must be at least 1");
  if (step > cfg.total_steps)
    throw ArgumentError("step " + std::to_string(step) + " beyond total_steps " + std::to_string(cfg.total_steps));
  const double frac = 1.0 - static_cast<double>(step) / static_cast<double>(cfg.total_steps);
  return cfg.base_lr * std::pow(frac, cfg.poly_power);
}

ModelParams init_params(const ModelConfig& cfg, Rng& rng) {
  ModelParams p = zero_params(cfg);
  p.visit([&](const std::string& name, Tensor& t) {
    if (name == "token_embedding") {
      for (double& v : t.values()) v = 0.02 * rng.normal();
    } else if (name.ends_with(".bias")) {
      t.fill(0.0);
    } else {
      const double bound = 1.0 / std::sqrt(static_cast<double>(t.rows()));
      for (double& v : t.values()) v = rng.uniform(-bound, bound);
    }
  });
  return p;
}

AdamState make_adam_state(const ModelParams& params) {
  AdamState s;
  s.m = params;
  s.v = params;
  s.m.visit([](const std::string&, Tensor& t) { t.fill(0.0); });
  s.v.visit([](const std::string&, Tensor& t) { t.fill(0.0); });
  return s;
}

namespace {

std::vector<Tensor*> tensor_list(ModelParams& p) {
  std::vector<Tensor*> out;
  p.visit([&](const std::string&, Tensor& t) { out.push_back(&t); });
  return out;
}

}  // namespace

double batch_loss_and_grad(std::span<const BatchItem> batch, const ModelParams& params,
                           const ModelConfig& mcfg, const LossWeights& weights, ModelParams* grad) {
  if (batch.empty()) throw ArgumentError("empty batch");
  std::vector<Tensor*> grad_slots;
  if (grad) {
    *grad = params;
    grad->visit([](const std::string&, Tensor& t) { t.fill(0.0); });
    grad_slots = tensor_list(*grad);
  }
  const auto& k = simd::active();
  double total = 0.0;
  // Samples are reduced in batch order so the sum is reproducible.
  for (const BatchItem& item : batch) {
    ad::Tape tape;
    const BoundParams bound = bind(tape, params, grad != nullptr);
    const ForwardGraph g = forward_graph(tape, *item.context, *item.expr, bound, mcfg);
    const SampleLoss l = sample_loss(g, *item.context, *item.expr, bound, mcfg, weights);
    total += l.total.value().item();
    if (grad) {
      tape.backward(l.total);
      std::size_t i = 0;
      bound.visit([&](const std::string&, const ad::Var& v) {
        const Tensor gv = tape.grad(v);
        k.add(gv.data(), grad_slots[i]->data(), gv.size());
        ++i;
      });
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  if (grad) {
    for (Tensor* t : grad_slots) k.scale(inv, t->data(), t->size());
  }
  return total * inv;
}

StepResult train_step(std::span<const BatchItem> batch, ModelParams& params, AdamState& state,
                      const ModelConfig& mcfg, const TrainConfig& tcfg) {
  tcfg.validate();
  const long step = static_cast<long>(state.step);
  ModelParams grad;
  double loss = 0.0;
  try {
    loss = batch_loss_and_grad(batch, params, mcfg, tcfg.weights, &grad);
  } catch (const ComputationError& e) {
    throw TrainingError(std::string("numerical failure: ") + e.what(), step);
  }
  if (!std::isfinite(loss)) throw TrainingError("non-finite loss", step);

  StepResult result;
  result.loss = loss;
  result.lr = poly_lr(state.step, tcfg);

  double sq = 0.0;
  grad.visit([&](const std::string&, const Tensor& t) {
    for (double v : t.values()) sq += v * v;
  });
  result.grad_norm = std::sqrt(sq);
  if (!std::isfinite(result.grad_norm)) throw TrainingError("non-finite gradient", step);
  if (tcfg.clip_norm > 0.0 && result.grad_norm > tcfg.clip_norm) {
    const double s = tcfg.clip_norm / result.grad_norm;
    grad.visit([&](const std::string&, Tensor& t) { simd::active().scale(s, t.data(), t.size()); });
  }

  const double t = static_cast<double>(state.step + 1);
  const double bc1 = 1.0 - std::pow(tcfg.beta1, t);
  const double bc2 = 1.0 - std::pow(tcfg.beta2, t);
  auto ps = tensor_list(params);
  auto ms = tensor_list(state.m);
  auto vs = tensor_list(state.v);
  auto gs = tensor_list(grad);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    auto& p = ps[i]->values();
    auto& m = ms[i]->values();
    auto& v = vs[i]->values();
    const auto& g = gs[i]->values();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = tcfg.beta1 * m[j] + (1.0 - tcfg.beta1) * g[j];
      v[j] = tcfg.beta2 * v[j] + (1.0 - tcfg.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= result.lr * mhat / (std::sqrt(vhat) + tcfg.adam_eps);
    }
  }
  ++state.step;
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'G', 'R', 'E', 'S', 'C', 'K', 'P', 'T'};

void put_u64_le(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64_le(const unsigned char* b) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void put_f64_le(std::ostream& out, double d) { put_u64_le(out, std::bit_cast<std::uint64_t>(d)); }

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  nlohmann::ordered_json header;
  header["format_version"] = ckpt.format_version;
  header["model"] = to_json(ckpt.model);
  header["step"] = ckpt.step;
  header["rng_state"] = ckpt.rng_state;
  nlohmann::ordered_json dir = nlohmann::ordered_json::array();
  std::uint64_t offset = 0;
  ckpt.params.visit([&](const std::string& name, const Tensor& t) {
    dir.push_back({{"name", name}, {"shape", {t.rows(), t.cols()}}, {"offset", offset}});
    offset += 8 * t.size();
  });
  header["tensors"] = dir;
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof kMagic);
  put_u64_le(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  ckpt.params.visit([&](const std::string&, const Tensor& t) {
    for (double v : t.values()) put_f64_le(out, v);
  });
  if (!out) throw FormatError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = "checkpoint " + path.string();
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    throw FormatError(where + ": bad header, not a version " + std::to_string(kCheckpointFormatVersion) +
                      " checkpoint");
  const std::uint64_t header_len = get_u64_le(bytes.data() + 8);
  if (header_len > bytes.size() - 16) throw FormatError(where + ": truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<long>(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(where + ": corrupt header: " + e.what());
  }
  Checkpoint ckpt;
  try {
    ckpt.format_version = header.at("format_version").get<int>();
    if (ckpt.format_version != kCheckpointFormatVersion)
      throw FormatError(where + ": unsupported format_version " + std::to_string(ckpt.format_version));
    ckpt.model = model_config_from_json(header.at("model"));
    ckpt.step = header.at("step").get<std::size_t>();
    ckpt.rng_state = header.at("rng_state").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(where + ": corrupt header: " + e.what());
  }
  ckpt.model.validate();

  struct Entry {
    std::size_t rows, cols;
    std::uint64_t offset;
  };
  std::map<std::string, Entry> entries;
  try {
    for (const auto& e : header.at("tensors")) {
      const auto shape = e.at("shape").get<std::vector<std::size_t>>();
      if (shape.size() != 2) throw FormatError(where + ": tensor '" + e.at("name").get<std::string>() + "' is not rank 2");
      entries[e.at("name").get<std::string>()] = {shape[0], shape[1], e.at("offset").get<std::uint64_t>()};
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(where + ": corrupt tensor directory: " + e.what());
  }

  const unsigned char* payload = bytes.data() + 16 + header_len;
  const std::size_t payload_len = bytes.size() - 16 - header_len;
  ckpt.params = zero_params(ckpt.model);
  std::size_t used = 0;
  ckpt.params.visit([&](const std::string& name, Tensor& t) {
    const auto it = entries.find(name);
    if (it == entries.end()) throw FormatError(where + ": missing tensor '" + name + "'");
    const Entry& e = it->second;
    if (e.rows != t.rows() || e.cols != t.cols())
      throw FormatError(where + ": tensor '" + name + "' has shape " + std::to_string(e.rows) + "x" +
                        std::to_string(e.cols) + ", expected " + std::to_string(t.rows()) + "x" +
                        std::to_string(t.cols()));
    if (e.offset + 8 * t.size() > payload_len) throw FormatError(where + ": tensor '" + name + "' truncated");
    for (std::size_t i = 0; i < t.size(); ++i)
      t.values()[i] = std::bit_cast<double>(get_u64_le(payload + e.offset + 8 * i));
    ++used;
  });
  if (used != entries.size()) throw FormatError(where + ": unexpected extra tensors");
  return ckpt;
}

// ---------------------------------------------------------------------------

Checkpoint fit(const DatasetManifest& data, const ModelConfig& mcfg, const TrainConfig& tcfg,
               const FitOptions& opts) {
  mcfg.validate();
  tcfg.validate();
  if (data.vocab.size() > mcfg.vocab_size)
    throw ArgumentError("dataset vocabulary (" + std::to_string(data.vocab.size()) + ") exceeds vocab_size " +
                        std::to_string(mcfg.vocab_size));
  std::vector<SceneContext> contexts;
  contexts.reserve(data.scenes.size());
  for (const auto& s : data.scenes) contexts.push_back(make_scene_context(s));
  std::vector<std::size_t> train;
  for (std::size_t i = 0; i < data.samples.size(); ++i)
    if (data.samples[i].train) train.push_back(i);
  if (train.empty()) throw ArgumentError("dataset has no training samples");

  Rng init_rng = Rng::derive(tcfg.seed, 0, 10);
  Rng shuffle_rng = Rng::derive(tcfg.seed, 0, 11);
  Checkpoint ckpt;
  ckpt.model = mcfg;
  ckpt.params = init_params(mcfg, init_rng);
  AdamState state = make_adam_state(ckpt.params);

  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  auto reshuffle = [&] {
    order = train;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.index(i)]);
    cursor = 0;
  };
  reshuffle();

  std::vector<BatchItem> batch;
  for (std::size_t step = 0; step < tcfg.total_steps; ++step) {
    batch.clear();
    for (std::size_t b = 0; b < tcfg.batch_size; ++b) {
      if (cursor == order.size()) reshuffle();
      const Sample& s = data.samples[order[cursor++]];
      batch.push_back({&contexts[s.scene], &s.expr});
    }
    const StepResult r = train_step(batch, ckpt.params, state, mcfg, tcfg);
    if (opts.on_step) opts.on_step(step, r);
  }
  ckpt.step = state.step;
  ckpt.rng_state = shuffle_rng.state();
  return ckpt;
}

}  // namespace gres
