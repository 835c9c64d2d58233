#include "gres/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <tuple>

#include "json.hpp"

#include "gres/errors.hpp"
#include "gres/random.hpp"

namespace gres {

namespace {

struct Palette {
  const char* word;
  Vec3 rgb;
};

constexpr std::array<Palette, 8> kPalette{{{"red", {0.85, 0.15, 0.15}},
                                           {"brown", {0.55, 0.35, 0.15}},
                                           {"green", {0.15, 0.7, 0.2}},
                                           {"blue", {0.15, 0.3, 0.85}},
                                           {"yellow", {0.9, 0.85, 0.15}},
                                           {"purple", {0.55, 0.2, 0.7}},
                                           {"orange", {0.95, 0.55, 0.1}},
                                           {"white", {0.95, 0.95, 0.95}}}};

constexpr Vec3 kFloorColor{0.45, 0.45, 0.45};

const std::vector<std::string> kFunctionWords{"<pad>", "the", "a",  "on", "left", "right", "side",
                                              "of",    "room", "it", "is", ",",    "which", "find"};

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

}  // namespace

void GenConfig::validate() const {
  if (num_scenes == 0) throw ArgumentError("num_scenes must be positive");
  if (instances_min == 0 || instances_min > instances_max) throw ArgumentError("bad instance count range");
  if (classes.empty() || classes.size() > kPalette.size())
    throw ArgumentError("between 1 and " + std::to_string(kPalette.size()) + " classes required");
  if (points_per_instance_min == 0 || points_per_instance_min > points_per_instance_max)
    throw ArgumentError("bad points-per-instance range");
  if (!(room_extent > 0.0) || !(grid_pitch > 0.0) || !(floor_pitch > 0.0))
    throw ArgumentError("room extent and pitches must be positive");
  if (samples_per_scene == 0) throw ArgumentError("samples_per_scene must be positive");
  double total = 0.0;
  for (double p : category_mix) {
    if (p < 0.0) throw ArgumentError("category proportions must be nonnegative");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ArgumentError("category proportions must sum to 1");
  if (val_fraction < 0.0 || val_fraction > 1.0) throw ArgumentError("val_fraction outside [0, 1]");
  if (max_placement_attempts == 0) throw ArgumentError("max_placement_attempts must be positive");
}

bool Box::contains(const Vec3& p) const {
  for (int c = 0; c < 3; ++c)
    if (p[c] < min[c] || p[c] > max[c]) return false;
  return true;
}

SceneLayout generate_layout(const GenConfig& cfg, std::size_t index) {
  cfg.validate();
  Rng rng = Rng::derive(cfg.seed, index, 1);
  const std::size_t k = static_cast<std::size_t>(
      rng.range(static_cast<long>(cfg.instances_min), static_cast<long>(cfg.instances_max)));
  constexpr double kGap = 0.15;
  SceneLayout layout;
  for (std::size_t i = 0; i < k; ++i) {
    const int cls = static_cast<int>(rng.index(cfg.classes.size()));
    const double sx = rng.uniform(0.35, 0.7);
    const double sy = rng.uniform(0.35, 0.7);
    const double sz = rng.uniform(0.4, 1.0);
    bool placed = false;
    for (std::size_t attempt = 0; attempt < cfg.max_placement_attempts && !placed; ++attempt) {
      const double x0 = rng.uniform(0.0, cfg.room_extent - sx);
      const double y0 = rng.uniform(0.0, cfg.room_extent - sy);
      const Box b{{x0, y0, 0.0}, {x0 + sx, y0 + sy, sz}};
      const bool clear = std::none_of(layout.boxes.begin(), layout.boxes.end(), [&](const Box& o) {
        return b.min[0] < o.max[0] + kGap && o.min[0] < b.max[0] + kGap && b.min[1] < o.max[1] + kGap &&
               o.min[1] < b.max[1] + kGap;
      });
      if (clear) {
        layout.boxes.push_back(b);
        layout.classes.push_back(cls);
        placed = true;
      }
    }
    if (!placed) {
      throw GenerationError("scene " + std::to_string(index) + ": could not place instance " +
                            std::to_string(i) + " without overlap after " +
                            std::to_string(cfg.max_placement_attempts) + " attempts");
    }
  }
  return layout;
}

SceneCloud generate_scene(const GenConfig& cfg, std::size_t index) {
  const SceneLayout layout = generate_layout(cfg, index);
  Rng rng = Rng::derive(cfg.seed, index, 2);
  SceneCloud scene;
  for (std::size_t i = 0; i < layout.boxes.size(); ++i) {
    const Box& b = layout.boxes[i];
    const Vec3 base = kPalette[layout.classes[i]].rgb;
    const Vec3 tint{rng.uniform(-0.06, 0.06), rng.uniform(-0.06, 0.06), rng.uniform(-0.06, 0.06)};
    const std::size_t n = static_cast<std::size_t>(rng.range(static_cast<long>(cfg.points_per_instance_min),
                                                             static_cast<long>(cfg.points_per_instance_max)));
    for (std::size_t p = 0; p < n; ++p) {
      scene.positions.push_back({rng.uniform(b.min[0], b.max[0]), rng.uniform(b.min[1], b.max[1]),
                                 rng.uniform(b.min[2], b.max[2])});
      Vec3 c;
      for (int ch = 0; ch < 3; ++ch) c[ch] = clamp01(base[ch] + tint[ch] + rng.uniform(-0.03, 0.03));
      scene.colors.push_back(c);
      scene.instance_id.push_back(static_cast<int>(i));
    }
    scene.instance_class.push_back(layout.classes[i]);
    scene.instance_center.push_back(
        {(b.min[0] + b.max[0]) / 2, (b.min[1] + b.max[1]) / 2, (b.min[2] + b.max[2]) / 2});
  }
  for (std::size_t p = 0; p < cfg.floor_points; ++p) {
    scene.positions.push_back({rng.uniform(0.0, cfg.room_extent), rng.uniform(0.0, cfg.room_extent), 0.0});
    Vec3 c;
    for (int ch = 0; ch < 3; ++ch) c[ch] = clamp01(kFloorColor[ch] + rng.uniform(-0.03, 0.03));
    scene.colors.push_back(c);
    scene.instance_id.push_back(-1);
  }
  // Superpoints: occupied grid cells split by instance, numbered by first
  // occurrence in point order.
  std::map<std::tuple<long, long, long, int>, int> cell_ids;
  scene.superpoint_id.resize(scene.positions.size());
  for (std::size_t p = 0; p < scene.positions.size(); ++p) {
    const int inst = scene.instance_id[p];
    const double pitch = inst >= 0 ? cfg.grid_pitch : cfg.floor_pitch;
    const auto& x = scene.positions[p];
    const auto key = std::make_tuple(static_cast<long>(std::floor(x[0] / pitch)),
                                     static_cast<long>(std::floor(x[1] / pitch)),
                                     static_cast<long>(std::floor(x[2] / pitch)), inst);
    const auto [it, inserted] = cell_ids.try_emplace(key, static_cast<int>(cell_ids.size()));
    scene.superpoint_id[p] = it->second;
  }
  scene.num_superpoints = cell_ids.size();
  scene.validate();
  return scene;
}

std::vector<std::string> build_vocabulary(const GenConfig& cfg) {
  std::vector<std::string> vocab = kFunctionWords;
  for (const auto& c : cfg.classes) vocab.push_back(c);
  for (std::size_t i = 0; i < cfg.classes.size(); ++i) vocab.push_back(kPalette[i].word);
  return vocab;
}

Category categorize(std::size_t targets, std::size_t class_instances) {
  const bool distractor = class_instances > targets;
  if (targets == 0) return distractor ? Category::kZeroTargetDistractor : Category::kZeroTargetNoDistractor;
  if (targets == 1) return distractor ? Category::kSingleTargetDistractor : Category::kSingleTargetNoDistractor;
  return Category::kMultiTarget;
}

namespace {

struct Candidate {
  int templ;  // 0 "the C", 1 "the COLOR C", 2 "the C on the SIDE side of the room", 3 "the C , it is on the SIDE"
  int cls;
  int side;   // 0 left, 1 right; unused for templates 0 and 1
};

struct Rendered {
  std::vector<std::string> words;
  std::array<std::vector<int>, kNumComponents> labels;
};

Rendered render(const Candidate& c, const GenConfig& cfg) {
  const std::string& noun = cfg.classes[c.cls];
  const std::string side = c.side == 0 ? "left" : "right";
  Rendered r;
  auto mark = [&](Component comp, int pos) { r.labels[static_cast<std::size_t>(comp)].push_back(pos); };
  switch (c.templ) {
    case 0:
      r.words = {"the", noun};
      mark(Component::kMain, 1);
      break;
    case 1:
      r.words = {"the", kPalette[c.cls].word, noun};
      mark(Component::kAttribute, 1);
      mark(Component::kMain, 2);
      break;
    case 2:
      r.words = {"the", noun, "on", "the", side, "side", "of", "the", "room"};
      mark(Component::kMain, 1);
      mark(Component::kRelation, 4);
      mark(Component::kAuxiliary, 8);
      break;
    default:
      r.words = {"find", "the", noun, ",", "it", "is", "on", "the", side};
      mark(Component::kMain, 2);
      mark(Component::kPronoun, 4);
      mark(Component::kRelation, 8);
      break;
  }
  return r;
}

std::vector<int> targets_of(const Candidate& c, const SceneCloud& scene, const GenConfig& cfg) {
  std::vector<int> out;
  const double mid = cfg.room_extent / 2.0;
  for (std::size_t i = 0; i < scene.num_instances(); ++i) {
    if (scene.instance_class[i] != c.cls) continue;
    if (c.templ >= 2) {
      const bool left = scene.instance_center[i][0] < mid;
      if ((c.side == 0) != left) continue;
    }
    out.push_back(static_cast<int>(i));
  }
  return out;
}

}  // namespace

std::vector<Sample> generate_samples(const SceneCloud& scene, const GenConfig& cfg, std::size_t scene_index,
                                     const std::vector<std::string>& vocab) {
  cfg.validate();
  if (scene.num_instances() == 0) throw ArgumentError("generate_samples needs a scene with instances");
  std::map<std::string, int> word_id;
  for (std::size_t i = 0; i < vocab.size(); ++i) word_id[vocab[i]] = static_cast<int>(i);

  std::array<std::vector<Candidate>, kNumCategories> by_category;
  for (int t = 0; t < 4; ++t) {
    for (int cls = 0; cls < static_cast<int>(cfg.classes.size()); ++cls) {
      for (int side = 0; side < (t >= 2 ? 2 : 1); ++side) {
        const Candidate c{t, cls, side};
        const std::size_t class_count = static_cast<std::size_t>(
            std::count(scene.instance_class.begin(), scene.instance_class.end(), cls));
        const Category cat = categorize(targets_of(c, scene, cfg).size(), class_count);
        by_category[static_cast<std::size_t>(cat)].push_back(c);
      }
    }
  }

  Rng rng = Rng::derive(cfg.seed, scene_index, 3);
  std::vector<Sample> out;
  for (std::size_t k = 0; k < cfg.samples_per_scene; ++k) {
    // Draw the wanted category, then walk forward to the next one this scene can realise.
    const double u = rng.uniform();
    std::size_t want = 0;
    double acc = 0.0;
    for (; want + 1 < kNumCategories; ++want) {
      acc += cfg.category_mix[want];
      if (u < acc) break;
    }
    std::size_t cat = want;
    while (by_category[cat].empty()) cat = (cat + 1) % kNumCategories;
    const auto& pool = by_category[cat];
    const Candidate c = pool[rng.index(pool.size())];

    const Rendered r = render(c, cfg);
    Sample s;
    s.scene = scene_index;
    s.train = rng.uniform() >= cfg.val_fraction;
    for (std::size_t w = 0; w < r.words.size(); ++w) {
      const auto it = word_id.find(r.words[w]);
      if (it == word_id.end()) throw ArgumentError("word '" + r.words[w] + "' missing from vocabulary");
      s.expr.token_ids.push_back(it->second);
      s.text += (w ? " " : "") + r.words[w];
    }
    s.expr.labels = r.labels;
    s.expr.target_instance_ids = targets_of(c, scene, cfg);
    s.expr.category = static_cast<Category>(cat);
    s.expr.validate();
    out.push_back(std::move(s));
  }
  return out;
}

DatasetManifest generate_dataset(const GenConfig& cfg) {
  cfg.validate();
  DatasetManifest m;
  m.format_version = kDatasetFormatVersion;
  m.vocab = build_vocabulary(cfg);
  for (std::size_t i = 0; i < cfg.num_scenes; ++i) {
    m.scenes.push_back(generate_scene(cfg, i));
    m.scene_files.push_back("scenes/scene_" + std::to_string(i) + ".json");
    auto samples = generate_samples(m.scenes.back(), cfg, i, m.vocab);
    m.samples.insert(m.samples.end(), samples.begin(), samples.end());
  }
  return m;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

constexpr std::array<const char*, kNumComponents> kComponentKeys{"main", "attri", "auxi", "pron", "rel"};

void check_fields(const json& obj, std::initializer_list<const char*> required, const std::string& where) {
  if (!obj.is_object()) throw FormatError(where + ": expected a JSON object");
  std::set<std::string> allowed;
  for (const char* k : required) {
    allowed.insert(k);
    if (!obj.contains(k)) throw FormatError(where + ": missing required field '" + k + "'");
  }
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key)) throw FormatError(where + ": unexpected field '" + key + "'");
  }
}

template <class T>
T get_field(const json& obj, const char* key, const std::string& where) {
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw FormatError(where + ": field '" + key + "' has the wrong type");
  }
}

json parse_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return json::parse(buf.str());
  } catch (const json::parse_error& e) {
    throw FormatError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_file(const std::filesystem::path& path, const ordered_json& doc) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << doc.dump(1) << '\n';
  if (!out) throw FormatError("failed writing " + path.string());
}

ordered_json scene_to_json(const SceneCloud& s) {
  ordered_json j;
  j["format_version"] = kDatasetFormatVersion;
  j["num_points"] = s.num_points();
  j["num_superpoints"] = s.num_superpoints;
  std::vector<double> pos, col;
  for (std::size_t p = 0; p < s.num_points(); ++p) {
    pos.insert(pos.end(), s.positions[p].begin(), s.positions[p].end());
    col.insert(col.end(), s.colors[p].begin(), s.colors[p].end());
  }
  j["positions"] = pos;
  j["colors"] = col;
  j["superpoint_id"] = s.superpoint_id;
  j["instance_id"] = s.instance_id;
  ordered_json inst = ordered_json::array();
  for (std::size_t i = 0; i < s.num_instances(); ++i) {
    inst.push_back({{"class", s.instance_class[i]},
                    {"center", {s.instance_center[i][0], s.instance_center[i][1], s.instance_center[i][2]}}});
  }
  j["instances"] = inst;
  return j;
}

SceneCloud scene_from_json(const json& j, const std::string& where) {
  check_fields(j, {"format_version", "num_points", "num_superpoints", "positions", "colors", "superpoint_id",
                   "instance_id", "instances"},
               where);
  const int version = get_field<int>(j, "format_version", where);
  if (version != kDatasetFormatVersion)
    throw FormatError(where + ": unsupported format_version " + std::to_string(version));
  const auto n = get_field<std::size_t>(j, "num_points", where);
  const auto pos = get_field<std::vector<double>>(j, "positions", where);
  const auto col = get_field<std::vector<double>>(j, "colors", where);
  SceneCloud s;
  s.num_superpoints = get_field<std::size_t>(j, "num_superpoints", where);
  s.superpoint_id = get_field<std::vector<int>>(j, "superpoint_id", where);
  s.instance_id = get_field<std::vector<int>>(j, "instance_id", where);
  if (pos.size() != 3 * n || col.size() != 3 * n || s.superpoint_id.size() != n || s.instance_id.size() != n)
    throw FormatError(where + ": array lengths disagree with num_points " + std::to_string(n));
  for (std::size_t p = 0; p < n; ++p) {
    s.positions.push_back({pos[3 * p], pos[3 * p + 1], pos[3 * p + 2]});
    s.colors.push_back({col[3 * p], col[3 * p + 1], col[3 * p + 2]});
  }
  const json& instances = j.at("instances");
  if (!instances.is_array()) throw FormatError(where + ": field 'instances' must be an array");
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const std::string w = where + ": instances[" + std::to_string(i) + "]";
    check_fields(instances[i], {"class", "center"}, w);
    s.instance_class.push_back(get_field<int>(instances[i], "class", w));
    const auto c = get_field<std::vector<double>>(instances[i], "center", w);
    if (c.size() != 3) throw FormatError(w + ": center must have 3 components");
    s.instance_center.push_back({c[0], c[1], c[2]});
  }
  try {
    s.validate();
  } catch (const StructuralError& e) {
    throw FormatError(where + ": " + e.what());
  }
  return s;
}

}  // namespace

void write_dataset(const DatasetManifest& manifest, const std::filesystem::path& dir) {
  if (manifest.scene_files.size() != manifest.scenes.size())
    throw ArgumentError("manifest lists " + std::to_string(manifest.scene_files.size()) + " scene files for " +
                        std::to_string(manifest.scenes.size()) + " scenes");
  std::error_code ec;
  std::filesystem::create_directories(dir / "scenes", ec);
  if (ec) throw FormatError("cannot create " + (dir / "scenes").string() + ": " + ec.message());

  ordered_json m;
  m["format_version"] = manifest.format_version;
  m["vocab"] = manifest.vocab;
  m["scenes"] = manifest.scene_files;
  ordered_json samples = ordered_json::array();
  for (const Sample& s : manifest.samples) {
    ordered_json labels;
    for (std::size_t c = 0; c < kNumComponents; ++c) labels[kComponentKeys[c]] = s.expr.labels[c];
    samples.push_back({{"scene", s.scene},
                       {"split", s.train ? "train" : "val"},
                       {"text", s.text},
                       {"token_ids", s.expr.token_ids},
                       {"labels", labels},
                       {"target_instance_ids", s.expr.target_instance_ids},
                       {"category", std::string(category_tag(s.expr.category))}});
  }
  m["samples"] = samples;
  write_file(dir / "manifest.json", m);
  for (std::size_t i = 0; i < manifest.scenes.size(); ++i) {
    write_file(dir / manifest.scene_files[i], scene_to_json(manifest.scenes[i]));
  }
}

DatasetManifest read_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!std::filesystem::exists(dir)) throw FormatError("dataset directory " + dir.string() + " does not exist");
  if (!std::filesystem::exists(manifest_path)) throw FormatError("missing " + manifest_path.string());
  const json j = parse_file(manifest_path);
  const std::string where = manifest_path.string();
  check_fields(j, {"format_version", "vocab", "scenes", "samples"}, where);
  DatasetManifest m;
  m.format_version = get_field<int>(j, "format_version", where);
  if (m.format_version != kDatasetFormatVersion)
    throw FormatError(where + ": unsupported format_version " + std::to_string(m.format_version) +
                      " (reader supports " + std::to_string(kDatasetFormatVersion) + ")");
  m.vocab = get_field<std::vector<std::string>>(j, "vocab", where);
  m.scene_files = get_field<std::vector<std::string>>(j, "scenes", where);
  for (const auto& f : m.scene_files) {
    const auto path = dir / f;
    if (!std::filesystem::exists(path)) throw FormatError("missing scene file " + path.string());
    m.scenes.push_back(scene_from_json(parse_file(path), path.string()));
  }
  const json& samples = j.at("samples");
  if (!samples.is_array()) throw FormatError(where + ": field 'samples' must be an array");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::string w = where + ": samples[" + std::to_string(i) + "]";
    const json& js = samples[i];
    check_fields(js, {"scene", "split", "text", "token_ids", "labels", "target_instance_ids", "category"}, w);
    Sample s;
    s.scene = get_field<std::size_t>(js, "scene", w);
    if (s.scene >= m.scenes.size()) throw FormatError(w + ": references missing scene " + std::to_string(s.scene));
    const auto split = get_field<std::string>(js, "split", w);
    if (split != "train" && split != "val") throw FormatError(w + ": split must be 'train' or 'val'");
    s.train = split == "train";
    s.text = get_field<std::string>(js, "text", w);
    s.expr.token_ids = get_field<std::vector<int>>(js, "token_ids", w);
    const json& labels = js.at("labels");
    check_fields(labels, {"main", "attri", "auxi", "pron", "rel"}, w + ".labels");
    for (std::size_t c = 0; c < kNumComponents; ++c)
      s.expr.labels[c] = get_field<std::vector<int>>(labels, kComponentKeys[c], w + ".labels");
    s.expr.target_instance_ids = get_field<std::vector<int>>(js, "target_instance_ids", w);
    try {
      s.expr.category = parse_category(get_field<std::string>(js, "category", w));
      s.expr.validate();
    } catch (const DataError& e) {
      throw FormatError(w + ": " + e.what());
    }
    for (int id : s.expr.token_ids)
      if (id < 0 || static_cast<std::size_t>(id) >= m.vocab.size())
        throw FormatError(w + ": token id " + std::to_string(id) + " outside the vocabulary");
    for (int t : s.expr.target_instance_ids)
      if (t < 0 || static_cast<std::size_t>(t) >= m.scenes[s.scene].num_instances())
        throw FormatError(w + ": target instance " + std::to_string(t) + " not in scene");
    m.samples.push_back(std::move(s));
  }
  return m;
}

}  // namespace gres
