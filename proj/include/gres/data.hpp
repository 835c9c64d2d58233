#pragma once

// Synthetic desk-scale scenes (colored boxes on a floor) with templated
// referring expressions covering zero-, single- and multi-target cases, and
// the JSON dataset container.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gres/geometry.hpp"
#include "gres/model.hpp"

namespace gres {

struct GenConfig {
  std::uint64_t seed = 0;
  std::size_t num_scenes = 8;
  std::size_t instances_min = 4;
  std::size_t instances_max = 6;
  std::vector<std::string> classes{"chair", "table", "sofa", "lamp", "shelf", "bed"};
  std::size_t points_per_instance_min = 40;
  std::size_t points_per_instance_max = 70;
  std::size_t floor_points = 80;
  double room_extent = 3.0;   // square room side, meters
  double grid_pitch = 0.25;   // superpoint cell size on objects
  double floor_pitch = 0.75;  // superpoint cell size on the floor
  std::size_t samples_per_scene = 5;
  // zt_dis, zt_nodis, st_dis, st_nodis, mt
  std::array<double, kNumCategories> category_mix{0.2, 0.2, 0.2, 0.2, 0.2};
  double val_fraction = 0.2;
  std::size_t max_placement_attempts = 500;

  void validate() const;
  friend bool operator==(const GenConfig&, const GenConfig&) = default;
};

struct Box {
  Vec3 min;
  Vec3 max;
  bool contains(const Vec3& p) const;
};

// Instance boxes and classes for scene `index`, before point sampling.
struct SceneLayout {
  std::vector<Box> boxes;
  std::vector<int> classes;
};

// Throws GenerationError when boxes cannot be placed without overlap.
SceneLayout generate_layout(const GenConfig& cfg, std::size_t index);
SceneCloud generate_scene(const GenConfig& cfg, std::size_t index);

// Word list shared by every generated expression. Class and color words
// follow the order of GenConfig::classes.
std::vector<std::string> build_vocabulary(const GenConfig& cfg);

struct Sample {
  std::size_t scene = 0;
  bool train = true;
  std::string text;
  Expression expr;
  friend bool operator==(const Sample&, const Sample&) = default;
};

// Category of a description targeting `targets` of `class_instances` instances
// of the mentioned class.
Category categorize(std::size_t targets, std::size_t class_instances);

std::vector<Sample> generate_samples(const SceneCloud& scene, const GenConfig& cfg, std::size_t scene_index,
                                     const std::vector<std::string>& vocab);

struct DatasetManifest {
  int format_version = 1;
  std::vector<std::string> vocab;
  std::vector<std::string> scene_files;  // relative to the dataset directory
  std::vector<SceneCloud> scenes;
  std::vector<Sample> samples;

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

inline constexpr int kDatasetFormatVersion = 1;

DatasetManifest generate_dataset(const GenConfig& cfg);

void write_dataset(const DatasetManifest& manifest, const std::filesystem::path& dir);
// Throws FormatError naming the offending file or field.
DatasetManifest read_dataset(const std::filesystem::path& dir);

}  // namespace gres
