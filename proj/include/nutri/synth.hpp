#pragma once

// Procedural food scenes with exact nutrition and depth ground truth.
//
// A scene is a set of placed item prototypes. Labels are computed from the
// placed geometry (area x per-area density x unclipped fraction), never
// from rendered pixels, so occlusion changes the image but not the label
// and a half-clipped item contributes exactly half.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "nutri/model.hpp"
#include "nutri/tensor.hpp"

namespace nutri {

struct Ingredient {
  std::string name;
  double grams = 0.0;
};

struct IngredientInfo {
  NutritionVector per_100g;  // mass component is 100
  std::array<double, 3> color{};
};

class NutrientDatabase {
 public:
  // Throws DataError for negative entries.
  void add(const std::string& name, const IngredientInfo& info);
  // Throws DataError naming the ingredient when it is missing.
  const IngredientInfo& lookup(const std::string& name) const;
  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  std::vector<std::string> names() const;
  std::size_t size() const { return entries_.size(); }

  // Built-in table of common dishes and ingredients, per 100 g.
  static NutrientDatabase builtin();

 private:
  std::map<std::string, IngredientInfo> entries_;
};

// Component-wise sum of grams / 100 * db[name]; mass is the total grams.
NutritionVector annotate_from_ingredients(const std::vector<Ingredient>& ingredients, const NutrientDatabase& db);

enum class FootprintShape { kEllipse, kBlob };

struct ItemPrototype {
  std::uint64_t id = 0;
  std::string ingredient;
  std::array<double, 3> color{};
  std::uint64_t texture_seed = 0;
  FootprintShape shape = FootprintShape::kEllipse;
  // Ellipse: radius_x, radius_y. Blob: r(theta) = radius_x * (1 + sum a_k cos(k theta + phi_k)), k = 2, 3, 4.
  double radius_x = 10.0;
  double radius_y = 10.0;
  std::array<double, 3> harmonics{};
  std::array<double, 3> phases{};
  double rotation = 0.0;     // radians
  double max_height = 0.03;  // meters
  double mass_density = 0.2; // grams per pixel^2
  NutritionVector density;   // per pixel^2, mass component == mass_density

  // Exact footprint area in pixel^2.
  double area() const;
  // Radius of a disc enclosing the footprint.
  double bounding_radius() const;
  // Normalized radius in prototype-local pixel offsets; <= 1 inside.
  double normalized_radius(double dx, double dy) const;
  // Height in meters at a local offset; 0 outside the footprint.
  double height_at(double dx, double dy) const;
  NutritionVector total() const { return area() * density; }
};

struct PrototypeRanges {
  double radius_min = 11.0;
  double radius_max = 21.0;
  double mass_density_min = 0.10;
  double mass_density_max = 0.30;
  double height_min = 0.01;
  double height_max = 0.05;
};

// Deterministic in seed.
ItemPrototype gen_prototype(std::uint64_t seed, const PrototypeRanges& ranges, const NutrientDatabase& db);
std::vector<ItemPrototype> make_prototype_library(std::size_t count, std::uint64_t seed, const PrototypeRanges& ranges,
                                                  const NutrientDatabase& db);

struct Placement {
  std::size_t prototype = 0;  // index into the library
  double cx = 0.0;            // canvas pixels
  double cy = 0.0;
  double scale = 1.0;         // area multiplier
  double rotation = 0.0;      // added to the prototype's rotation
  std::uint64_t texture_seed = 0;
};

struct RenderOptions {
  double baseline = 0.6;  // camera-to-plate distance, meters
  double texture_amp = 0.15;
  std::array<double, 3> table_color{0.32, 0.24, 0.18};
  std::array<double, 3> plate_color{0.90, 0.90, 0.88};

  bool operator==(const RenderOptions&) const = default;
};

// Fraction of a placed footprint that lands inside the canvas, measured on
// a symmetric 64 x 64 sample grid over the footprint's bounding square.
double unclipped_fraction(const ItemPrototype& proto, const Placement& p, std::int64_t height, std::int64_t width);

struct SceneLabel {
  NutritionVector label;
  std::vector<Ingredient> ingredients;  // one entry per placed item
  std::vector<double> unclipped;        // per placed item
};

SceneLabel label_from_layout(const std::vector<ItemPrototype>& library, const std::vector<Placement>& placements,
                             std::int64_t height, std::int64_t width);

struct Scene {
  std::int64_t height = 0, width = 0;
  std::uint64_t seed = 0;
  std::vector<Placement> placements;  // occlusion order: later items on top
  Tensor rgb;    // [3, H, W] in [0, 1]
  Tensor depth;  // [1, H, W] meters, baseline minus tallest item height
  SceneLabel label;
};

Scene compose_scene(const std::vector<ItemPrototype>& library, const std::vector<Placement>& placements,
                    std::int64_t height, std::int64_t width, std::uint64_t seed, const RenderOptions& opts = {});

struct LayoutOptions {
  int min_items = 1;
  int max_items = 5;
  double scale_min = 0.5;
  double scale_max = 1.5;
  double edge_allowance = 0.05;  // centers lie in a centered disc of radius (0.45 + this) * canvas

  bool operator==(const LayoutOptions&) const = default;
};

// Item count, prototypes, scales and positions drawn from seed. Centers
// are resampled a few times to limit heavy overlap.
std::vector<Placement> random_layout(const std::vector<ItemPrototype>& library, std::int64_t height,
                                     std::int64_t width, std::uint64_t seed, const LayoutOptions& opts);

// ---------------------------------------------------------------- corpus

struct SynthConfig {
  std::int64_t canvas = 128;
  std::size_t samples = 100;
  std::uint64_t seed = 7;
  std::uint64_t library_seed = 1234;
  std::size_t library_size = 12;
  LayoutOptions layout;
  RenderOptions render;
  int split_train = 7;
  int split_test = 3;
  bool export_preview = false;

  // Prototype size and density ranges scaled to the canvas so grams per
  // item do not depend on resolution.
  PrototypeRanges prototype_ranges() const;

  bool operator==(const SynthConfig&) const = default;
};

struct ManifestRecord {
  std::string id;
  std::filesystem::path rgb_path;    // relative to the corpus root
  std::filesystem::path depth_path;  // relative to the corpus root
  std::vector<Ingredient> ingredients;
  NutritionVector label;
  std::string split;  // "train" or "test"
  std::uint64_t seed = 0;
  std::vector<Placement> placements;
};

struct Corpus {
  std::filesystem::path root;
  SynthConfig config;
  NutrientDatabase database;
  std::vector<ItemPrototype> library;
  std::vector<ManifestRecord> records;
};

// Split assignment: a seed-determined permutation, the first
// round(n * train / (train + test)) entries go to train.
std::vector<std::string> assign_splits(std::size_t n, int train, int test, std::uint64_t seed);

// Writes dataset.json, manifest.jsonl, rgb/*.ntsr, depth/*.ntsr and, when
// requested, preview/*.ppm under `root`. Throws DataError naming the
// sample on I/O failure.
Corpus gen_dataset(const SynthConfig& config, const std::filesystem::path& root);

// Reads dataset.json and manifest.jsonl.
Corpus load_corpus(const std::filesystem::path& root);

// 8-bit binary PPM of a [3, H, W] image in [0, 1].
void write_ppm(const std::filesystem::path& path, const Tensor& rgb);
// [1, 3, H, W] in [0, 1].
Tensor read_ppm(const std::filesystem::path& path);

}  // namespace nutri
