#include "nutri/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>

#include <json.hpp>

#include "nutri/errors.hpp"
#include "nutri/params.hpp"
#include "nutri/tensor_io.hpp"

namespace nutri {

using json = nlohmann::json;

// ---------------------------------------------------------------- database

void NutrientDatabase::add(const std::string& name, const IngredientInfo& info) {
  for (std::size_t i = 0; i < kNumTasks; ++i) {
    if (!(info.per_100g[i] >= 0.0)) throw DataError("nutrient database: negative entry for " + name);
  }
  entries_[name] = info;
}

const IngredientInfo& NutrientDatabase::lookup(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw DataError("nutrient database: unknown ingredient '" + name + "'");
  return it->second;
}

std::vector<std::string> NutrientDatabase::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [k, v] : entries_) out.push_back(k);
  return out;
}

NutrientDatabase NutrientDatabase::builtin() {
  struct Row {
    const char* name;
    double kcal, fat, carb, protein;
    std::array<double, 3> color;
  };
  // Rounded per-100 g values for cooked foods.
  static const Row rows[] = {
      {"white_rice", 130.0, 0.3, 28.2, 2.7, {0.93, 0.92, 0.86}},
      {"chicken_breast", 165.0, 3.6, 0.2, 31.0, {0.85, 0.72, 0.52}},
      {"broccoli", 35.0, 0.4, 7.2, 2.4, {0.20, 0.55, 0.20}},
      {"carrot", 35.0, 0.2, 8.2, 0.8, {0.93, 0.50, 0.13}},
      {"beef_stew", 250.0, 15.0, 0.5, 26.0, {0.45, 0.25, 0.18}},
      {"tofu", 144.0, 8.7, 2.8, 15.8, {0.96, 0.94, 0.78}},
      {"potato", 87.0, 0.1, 20.1, 1.9, {0.88, 0.78, 0.50}},
      {"scrambled_egg", 149.0, 11.0, 1.6, 10.0, {0.98, 0.85, 0.30}},
      {"salmon", 206.0, 12.4, 0.2, 22.1, {0.95, 0.55, 0.45}},
      {"noodles", 138.0, 2.1, 25.0, 4.5, {0.95, 0.84, 0.62}},
      {"spinach", 41.0, 1.9, 4.0, 3.0, {0.12, 0.35, 0.12}},
      {"tomato_egg", 86.0, 5.5, 5.0, 4.0, {0.85, 0.25, 0.15}},
      {"pork_belly", 420.0, 38.0, 3.0, 14.0, {0.55, 0.30, 0.20}},
      {"green_beans", 35.0, 0.3, 7.9, 1.9, {0.35, 0.65, 0.25}},
      {"mapo_tofu", 120.0, 8.0, 4.0, 8.0, {0.80, 0.30, 0.10}},
      {"bok_choy", 13.0, 0.2, 2.2, 1.5, {0.55, 0.80, 0.45}},
  };
  NutrientDatabase db;
  for (const auto& r : rows) {
    IngredientInfo info;
    info.per_100g.values = {r.kcal, 100.0, r.fat, r.carb, r.protein};
    info.color = r.color;
    db.add(r.name, info);
  }
  return db;
}

NutritionVector annotate_from_ingredients(const std::vector<Ingredient>& ingredients, const NutrientDatabase& db) {
  NutritionVector total;
  for (const auto& ing : ingredients) {
    if (!(ing.grams >= 0.0)) throw DataError("annotate: negative grams for " + ing.name);
    const auto& info = db.lookup(ing.name);
    for (std::size_t i = 0; i < kNumTasks; ++i) {
      total[i] += i == 1 ? ing.grams : ing.grams / 100.0 * info.per_100g[i];
    }
  }
  return total;
}

// ---------------------------------------------------------------- prototypes

double ItemPrototype::area() const {
  if (shape == FootprintShape::kEllipse) return std::numbers::pi * radius_x * radius_y;
  double sq = 0.0;
  for (double a : harmonics) sq += a * a;
  return std::numbers::pi * radius_x * radius_x * (1.0 + 0.5 * sq);
}

double ItemPrototype::bounding_radius() const {
  if (shape == FootprintShape::kEllipse) return std::max(radius_x, radius_y);
  double s = 0.0;
  for (double a : harmonics) s += std::fabs(a);
  return radius_x * (1.0 + s);
}

double ItemPrototype::normalized_radius(double dx, double dy) const {
  if (shape == FootprintShape::kEllipse) {
    const double u = dx / radius_x, v = dy / radius_y;
    return std::sqrt(u * u + v * v);
  }
  const double r = std::hypot(dx, dy);
  if (r == 0.0) return 0.0;
  const double theta = std::atan2(dy, dx);
  double edge = 1.0;
  for (std::size_t k = 0; k < harmonics.size(); ++k) {
    edge += harmonics[k] * std::cos(static_cast<double>(k + 2) * theta + phases[k]);
  }
  return r / (radius_x * edge);
}

double ItemPrototype::height_at(double dx, double dy) const {
  const double rho = normalized_radius(dx, dy);
  if (rho >= 1.0) return 0.0;
  return max_height * std::sqrt(1.0 - rho * rho);
}

ItemPrototype gen_prototype(std::uint64_t seed, const PrototypeRanges& ranges, const NutrientDatabase& db) {
  if (db.size() == 0) throw DataError("gen_prototype: empty nutrient database");
  Rng rng(seed);
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  const auto names = db.names();

  ItemPrototype p;
  p.id = seed;
  p.ingredient = names[std::uniform_int_distribution<std::size_t>(0, names.size() - 1)(rng)];
  const auto& info = db.lookup(p.ingredient);
  for (std::size_t c = 0; c < 3; ++c) p.color[c] = std::clamp(info.color[c] + uni(-0.05, 0.05), 0.0, 1.0);
  p.texture_seed = rng();
  p.shape = uni(0.0, 1.0) < 0.5 ? FootprintShape::kEllipse : FootprintShape::kBlob;
  p.radius_x = uni(ranges.radius_min, ranges.radius_max);
  p.radius_y = p.radius_x * uni(0.6, 1.0);
  for (std::size_t k = 0; k < 3; ++k) {
    p.harmonics[k] = uni(-0.1, 0.1);
    p.phases[k] = uni(0.0, 2.0 * std::numbers::pi);
  }
  p.rotation = uni(0.0, std::numbers::pi);
  p.max_height = uni(ranges.height_min, ranges.height_max);
  p.mass_density = uni(ranges.mass_density_min, ranges.mass_density_max);
  for (std::size_t i = 0; i < kNumTasks; ++i) p.density[i] = p.mass_density / 100.0 * info.per_100g[i];
  p.density[1] = p.mass_density;
  return p;
}

std::vector<ItemPrototype> make_prototype_library(std::size_t count, std::uint64_t seed, const PrototypeRanges& ranges,
                                                  const NutrientDatabase& db) {
  std::vector<ItemPrototype> lib;
  lib.reserve(count);
  for (std::size_t i = 0; i < count; ++i) lib.push_back(gen_prototype(derive_seed(seed, i), ranges, db));
  return lib;
}

// ---------------------------------------------------------------- geometry

namespace {

constexpr int kClipGrid = 64;

struct Frame {
  double cx, cy, lin, cos_t, sin_t;

  explicit Frame(const ItemPrototype& proto, const Placement& p)
      : cx(p.cx), cy(p.cy), lin(std::sqrt(p.scale)) {
    const double t = proto.rotation + p.rotation;
    cos_t = std::cos(t);
    sin_t = std::sin(t);
  }
  // Canvas point to prototype-local offsets.
  void to_local(double x, double y, double& u, double& v) const {
    const double dx = x - cx, dy = y - cy;
    u = (cos_t * dx + sin_t * dy) / lin;
    v = (-sin_t * dx + cos_t * dy) / lin;
  }
  void to_canvas(double u, double v, double& x, double& y) const {
    x = cx + lin * (cos_t * u - sin_t * v);
    y = cy + lin * (sin_t * u + cos_t * v);
  }
};

const ItemPrototype& proto_at(const std::vector<ItemPrototype>& library, const Placement& p) {
  if (p.prototype >= library.size()) {
    throw DataError("placement refers to prototype " + std::to_string(p.prototype) + " of " +
                    std::to_string(library.size()));
  }
  return library[p.prototype];
}

double hash01(std::uint64_t seed, std::int64_t ix, std::int64_t iy) {
  const auto h = derive_seed(derive_seed(seed, static_cast<std::uint64_t>(ix)), static_cast<std::uint64_t>(iy));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

// Smooth value noise in [0, 1] on a lattice with the given cell size.
double value_noise(std::uint64_t seed, double x, double y, double cell) {
  const double gx = x / cell, gy = y / cell;
  const double fx = std::floor(gx), fy = std::floor(gy);
  const auto ix = static_cast<std::int64_t>(fx), iy = static_cast<std::int64_t>(fy);
  auto smooth = [](double t) { return t * t * (3.0 - 2.0 * t); };
  const double tx = smooth(gx - fx), ty = smooth(gy - fy);
  const double a = hash01(seed, ix, iy), b = hash01(seed, ix + 1, iy);
  const double c = hash01(seed, ix, iy + 1), d = hash01(seed, ix + 1, iy + 1);
  return (a * (1 - tx) + b * tx) * (1 - ty) + (c * (1 - tx) + d * tx) * ty;
}

}  // namespace

double unclipped_fraction(const ItemPrototype& proto, const Placement& p, std::int64_t height, std::int64_t width) {
  const Frame f(proto, p);
  const double r = proto.bounding_radius();
  std::int64_t inside = 0, kept = 0;
  for (int j = 0; j < kClipGrid; ++j) {
    const double v = ((j + 0.5) / kClipGrid * 2.0 - 1.0) * r;
    for (int i = 0; i < kClipGrid; ++i) {
      const double u = ((i + 0.5) / kClipGrid * 2.0 - 1.0) * r;
      if (proto.normalized_radius(u, v) > 1.0) continue;
      ++inside;
      double x, y;
      f.to_canvas(u, v, x, y);
      if (x >= 0.0 && x < static_cast<double>(width) && y >= 0.0 && y < static_cast<double>(height)) ++kept;
    }
  }
  if (inside == 0) return 0.0;
  return static_cast<double>(kept) / static_cast<double>(inside);
}

SceneLabel label_from_layout(const std::vector<ItemPrototype>& library, const std::vector<Placement>& placements,
                             std::int64_t height, std::int64_t width) {
  SceneLabel out;
  for (const auto& p : placements) {
    const auto& proto = proto_at(library, p);
    if (!(p.scale > 0.0)) throw DataError("placement scale must be positive");
    const double frac = unclipped_fraction(proto, p, height, width);
    const double share = p.scale * frac;
    out.label += share * proto.total();
    out.ingredients.push_back({proto.ingredient, share * proto.area() * proto.mass_density});
    out.unclipped.push_back(frac);
  }
  return out;
}

// ---------------------------------------------------------------- rendering

Scene compose_scene(const std::vector<ItemPrototype>& library, const std::vector<Placement>& placements,
                    std::int64_t height, std::int64_t width, std::uint64_t seed, const RenderOptions& opts) {
  if (height < 1 || width < 1) throw DimensionError("compose_scene: empty canvas");
  Scene s;
  s.height = height;
  s.width = width;
  s.seed = seed;
  s.placements = placements;
  s.label = label_from_layout(library, placements, height, width);

  const auto hw = static_cast<std::size_t>(height * width);
  std::vector<double> rgb(3 * hw), hmax(hw, 0.0);

  // Table and plate.
  const double pcx = 0.5 * static_cast<double>(width), pcy = 0.5 * static_cast<double>(height);
  const double plate_r = 0.46 * static_cast<double>(std::min(height, width));
  const auto bg_seed = derive_seed(seed, 0xB6);
  for (std::int64_t y = 0; y < height; ++y) {
    for (std::int64_t x = 0; x < width; ++x) {
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      const bool on_plate = std::hypot(px - pcx, py - pcy) <= plate_r;
      const auto& base = on_plate ? opts.plate_color : opts.table_color;
      const double n = 1.0 + 0.06 * (value_noise(bg_seed, px, py, 6.0) - 0.5);
      const auto idx = static_cast<std::size_t>(y * width + x);
      for (std::size_t c = 0; c < 3; ++c) rgb[c * hw + idx] = std::clamp(base[c] * n, 0.0, 1.0);
    }
  }

  for (const auto& p : placements) {
    const auto& proto = proto_at(library, p);
    const Frame f(proto, p);
    const auto tex = derive_seed(proto.texture_seed, p.texture_seed);
    const double reach = proto.bounding_radius() * f.lin + 1.0;
    const auto x0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(p.cx - reach)));
    const auto x1 = std::min<std::int64_t>(width, static_cast<std::int64_t>(std::ceil(p.cx + reach)) + 1);
    const auto y0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(p.cy - reach)));
    const auto y1 = std::min<std::int64_t>(height, static_cast<std::int64_t>(std::ceil(p.cy + reach)) + 1);
    for (std::int64_t y = y0; y < y1; ++y) {
      for (std::int64_t x = x0; x < x1; ++x) {
        double u, v;
        f.to_local(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5, u, v);
        const double rho = proto.normalized_radius(u, v);
        if (rho >= 1.0) continue;
        const double dome = std::sqrt(1.0 - rho * rho);
        const auto idx = static_cast<std::size_t>(y * width + x);
        hmax[idx] = std::max(hmax[idx], proto.max_height * dome);
        const double shade = 0.7 + 0.3 * dome;
        const double grain = 1.0 + opts.texture_amp * (2.0 * value_noise(tex, u, v, 3.0) - 1.0);
        for (std::size_t c = 0; c < 3; ++c) {
          rgb[c * hw + idx] = std::clamp(proto.color[c] * shade * grain, 0.0, 1.0);
        }
      }
    }
  }

  std::vector<double> depth(hw);
  for (std::size_t i = 0; i < hw; ++i) depth[i] = opts.baseline - hmax[i];
  s.rgb = Tensor::from({3, height, width}, std::move(rgb));
  s.depth = Tensor::from({1, height, width}, std::move(depth));
  return s;
}

std::vector<Placement> random_layout(const std::vector<ItemPrototype>& library, std::int64_t height,
                                     std::int64_t width, std::uint64_t seed, const LayoutOptions& opts) {
  if (library.empty()) throw ConfigError("random_layout: empty prototype library");
  if (opts.min_items < 1 || opts.max_items < opts.min_items) throw ConfigError("random_layout: bad item count range");
  if (!(opts.scale_min > 0.0) || opts.scale_max < opts.scale_min) throw ConfigError("random_layout: bad scale range");
  Rng rng(seed);
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  const int n = std::uniform_int_distribution<int>(opts.min_items, opts.max_items)(rng);
  const double w = static_cast<double>(width), h = static_cast<double>(height);
  const double a = opts.edge_allowance;

  std::vector<Placement> out;
  std::vector<double> radii;
  for (int k = 0; k < n; ++k) {
    Placement p;
    p.prototype = std::uniform_int_distribution<std::size_t>(0, library.size() - 1)(rng);
    p.scale = uni(opts.scale_min, opts.scale_max);
    p.rotation = uni(0.0, std::numbers::pi);
    p.texture_seed = rng();
    const double r = library[p.prototype].bounding_radius() * std::sqrt(p.scale);
    for (int attempt = 0; attempt < 12; ++attempt) {
      const double rad = (0.45 + a) * std::sqrt(uni(0.0, 1.0));
      const double ang = uni(0.0, 2.0 * std::numbers::pi);
      p.cx = 0.5 * w + rad * w * std::cos(ang);
      p.cy = 0.5 * h + rad * h * std::sin(ang);
      bool clear = true;
      for (std::size_t j = 0; j < out.size() && clear; ++j) {
        clear = std::hypot(p.cx - out[j].cx, p.cy - out[j].cy) >= 0.7 * (r + radii[j]);
      }
      if (clear) break;
    }
    out.push_back(p);
    radii.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------- corpus

PrototypeRanges SynthConfig::prototype_ranges() const {
  PrototypeRanges r;
  const double f = static_cast<double>(canvas) / 128.0;
  r.radius_min *= f;
  r.radius_max *= f;
  r.mass_density_min /= f * f;
  r.mass_density_max /= f * f;
  return r;
}

std::vector<std::string> assign_splits(std::size_t n, int train, int test, std::uint64_t seed) {
  if (train < 0 || test < 0 || train + test == 0) throw ConfigError("split ratio must be nonnegative, not 0:0");
  const auto n_train = static_cast<std::size_t>(
      std::llround(static_cast<double>(n) * train / static_cast<double>(train + test)));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(seed, 0x5B11));
  // Fisher-Yates with an explicit draw so the order does not depend on the
  // standard library's shuffle implementation.
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  std::vector<std::string> split(n);
  for (std::size_t k = 0; k < n; ++k) split[order[k]] = k < n_train ? "train" : "test";
  return split;
}

namespace {

std::string sample_id(std::size_t i) {
  std::ostringstream os;
  os << std::setw(6) << std::setfill('0') << i;
  return os.str();
}

json to_json(const std::array<double, 3>& a) { return json::array({a[0], a[1], a[2]}); }

std::array<double, 3> arr3(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

json to_json(const NutritionVector& v) { return json(std::vector<double>(v.values.begin(), v.values.end())); }

NutritionVector nv(const json& j) {
  if (!j.is_array() || j.size() != kNumTasks) throw DataError("expected a 5-element nutrition array");
  NutritionVector v;
  for (std::size_t i = 0; i < kNumTasks; ++i) v[i] = j.at(i).get<double>();
  return v;
}

json config_json(const SynthConfig& c) {
  return {
      {"canvas", c.canvas},
      {"samples", c.samples},
      {"seed", c.seed},
      {"library_seed", c.library_seed},
      {"library_size", c.library_size},
      {"layout",
       {{"min_items", c.layout.min_items},
        {"max_items", c.layout.max_items},
        {"scale_min", c.layout.scale_min},
        {"scale_max", c.layout.scale_max},
        {"edge_allowance", c.layout.edge_allowance}}},
      {"render",
       {{"baseline", c.render.baseline},
        {"texture_amp", c.render.texture_amp},
        {"table_color", to_json(c.render.table_color)},
        {"plate_color", to_json(c.render.plate_color)}}},
      {"split_train", c.split_train},
      {"split_test", c.split_test},
      {"export_preview", c.export_preview},
  };
}

SynthConfig config_from_json(const json& j) {
  SynthConfig c;
  c.canvas = j.at("canvas").get<std::int64_t>();
  c.samples = j.at("samples").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.library_seed = j.at("library_seed").get<std::uint64_t>();
  c.library_size = j.at("library_size").get<std::size_t>();
  const auto& l = j.at("layout");
  c.layout.min_items = l.at("min_items").get<int>();
  c.layout.max_items = l.at("max_items").get<int>();
  c.layout.scale_min = l.at("scale_min").get<double>();
  c.layout.scale_max = l.at("scale_max").get<double>();
  c.layout.edge_allowance = l.at("edge_allowance").get<double>();
  const auto& r = j.at("render");
  c.render.baseline = r.at("baseline").get<double>();
  c.render.texture_amp = r.at("texture_amp").get<double>();
  c.render.table_color = arr3(r.at("table_color"));
  c.render.plate_color = arr3(r.at("plate_color"));
  c.split_train = j.at("split_train").get<int>();
  c.split_test = j.at("split_test").get<int>();
  c.export_preview = j.at("export_preview").get<bool>();
  return c;
}

json prototype_json(const ItemPrototype& p) {
  return {
      {"id", p.id},
      {"ingredient", p.ingredient},
      {"color", to_json(p.color)},
      {"texture_seed", p.texture_seed},
      {"shape", p.shape == FootprintShape::kEllipse ? "ellipse" : "blob"},
      {"radius_x", p.radius_x},
      {"radius_y", p.radius_y},
      {"harmonics", to_json(p.harmonics)},
      {"phases", to_json(p.phases)},
      {"rotation", p.rotation},
      {"max_height", p.max_height},
      {"mass_density", p.mass_density},
      {"density", to_json(p.density)},
  };
}

ItemPrototype prototype_from_json(const json& j) {
  ItemPrototype p;
  p.id = j.at("id").get<std::uint64_t>();
  p.ingredient = j.at("ingredient").get<std::string>();
  p.color = arr3(j.at("color"));
  p.texture_seed = j.at("texture_seed").get<std::uint64_t>();
  const auto shape = j.at("shape").get<std::string>();
  if (shape != "ellipse" && shape != "blob") throw DataError("unknown footprint shape '" + shape + "'");
  p.shape = shape == "ellipse" ? FootprintShape::kEllipse : FootprintShape::kBlob;
  p.radius_x = j.at("radius_x").get<double>();
  p.radius_y = j.at("radius_y").get<double>();
  p.harmonics = arr3(j.at("harmonics"));
  p.phases = arr3(j.at("phases"));
  p.rotation = j.at("rotation").get<double>();
  p.max_height = j.at("max_height").get<double>();
  p.mass_density = j.at("mass_density").get<double>();
  p.density = nv(j.at("density"));
  return p;
}

json record_json(const ManifestRecord& r) {
  json ings = json::array();
  for (const auto& i : r.ingredients) ings.push_back({{"name", i.name}, {"grams", i.grams}});
  json places = json::array();
  for (const auto& p : r.placements) {
    places.push_back({{"prototype", p.prototype},
                      {"cx", p.cx},
                      {"cy", p.cy},
                      {"scale", p.scale},
                      {"rotation", p.rotation},
                      {"texture_seed", p.texture_seed}});
  }
  return {{"id", r.id},
          {"rgb", r.rgb_path.generic_string()},
          {"depth", r.depth_path.generic_string()},
          {"ingredients", ings},
          {"label", to_json(r.label)},
          {"split", r.split},
          {"seed", r.seed},
          {"placements", places}};
}

ManifestRecord record_from_json(const json& j) {
  ManifestRecord r;
  r.id = j.at("id").get<std::string>();
  r.rgb_path = j.at("rgb").get<std::string>();
  r.depth_path = j.at("depth").get<std::string>();
  for (const auto& i : j.at("ingredients")) r.ingredients.push_back({i.at("name"), i.at("grams").get<double>()});
  r.label = nv(j.at("label"));
  r.split = j.at("split").get<std::string>();
  if (r.split != "train" && r.split != "test") throw DataError("sample " + r.id + ": unknown split '" + r.split + "'");
  r.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("placements")) {
    for (const auto& p : j.at("placements")) {
      Placement q;
      q.prototype = p.at("prototype").get<std::size_t>();
      q.cx = p.at("cx").get<double>();
      q.cy = p.at("cy").get<double>();
      q.scale = p.at("scale").get<double>();
      q.rotation = p.at("rotation").get<double>();
      q.texture_seed = p.at("texture_seed").get<std::uint64_t>();
      r.placements.push_back(q);
    }
  }
  return r;
}

json database_json(const NutrientDatabase& db) {
  json out = json::object();
  for (const auto& name : db.names()) {
    const auto& info = db.lookup(name);
    out[name] = {{"per_100g", to_json(info.per_100g)}, {"color", to_json(info.color)}};
  }
  return out;
}

NutrientDatabase database_from_json(const json& j) {
  NutrientDatabase db;
  for (const auto& [name, v] : j.items()) db.add(name, {nv(v.at("per_100g")), arr3(v.at("color"))});
  return db;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  os << text;
  if (!os) throw DataError("cannot write " + path.string());
}

}  // namespace

Corpus gen_dataset(const SynthConfig& config, const std::filesystem::path& root) {
  if (config.samples < 2) throw ConfigError("gen-data: need at least 2 samples");
  if (config.canvas < 8) throw ConfigError("gen-data: canvas must be at least 8 pixels");
  if (config.library_size < 1) throw ConfigError("gen-data: library size must be positive");

  Corpus corpus;
  corpus.root = root;
  corpus.config = config;
  corpus.database = NutrientDatabase::builtin();
  corpus.library =
      make_prototype_library(config.library_size, config.library_seed, config.prototype_ranges(), corpus.database);

  std::error_code ec;
  for (const char* sub : {"rgb", "depth"}) std::filesystem::create_directories(root / sub, ec);
  if (config.export_preview) std::filesystem::create_directories(root / "preview", ec);
  if (ec) throw DataError("cannot create corpus directories under " + root.string() + ": " + ec.message());

  const auto splits = assign_splits(config.samples, config.split_train, config.split_test, config.seed);
  for (std::size_t i = 0; i < config.samples; ++i) {
    ManifestRecord r;
    r.id = sample_id(i);
    r.seed = derive_seed(config.seed, i);
    r.split = splits[i];
    r.rgb_path = std::filesystem::path("rgb") / (r.id + ".ntsr");
    r.depth_path = std::filesystem::path("depth") / (r.id + ".ntsr");
    r.placements = random_layout(corpus.library, config.canvas, config.canvas, r.seed, config.layout);
    const auto scene = compose_scene(corpus.library, r.placements, config.canvas, config.canvas, r.seed, config.render);
    r.label = scene.label.label;
    r.ingredients = scene.label.ingredients;
    try {
      save_tensor(root / r.rgb_path, scene.rgb, Precision::kFloat32);
      save_tensor(root / r.depth_path, scene.depth, Precision::kFloat32);
      if (config.export_preview) write_ppm(root / "preview" / (r.id + ".ppm"), scene.rgb);
    } catch (const std::exception& e) {
      throw DataError("sample " + r.id + ": " + e.what());
    }
    corpus.records.push_back(std::move(r));
  }

  json meta = {{"format", 1},
               {"config", config_json(config)},
               {"database", database_json(corpus.database)},
               {"library", json::array()}};
  for (const auto& p : corpus.library) meta["library"].push_back(prototype_json(p));
  write_text(root / "dataset.json", meta.dump(2) + "\n");

  std::string lines;
  for (const auto& r : corpus.records) lines += record_json(r).dump() + "\n";
  write_text(root / "manifest.jsonl", lines);
  return corpus;
}

Corpus load_corpus(const std::filesystem::path& root) {
  Corpus corpus;
  corpus.root = root;
  std::ifstream meta_in(root / "dataset.json");
  if (!meta_in) throw DataError("cannot open " + (root / "dataset.json").string());
  try {
    const auto meta = json::parse(meta_in);
    corpus.config = config_from_json(meta.at("config"));
    corpus.database = database_from_json(meta.at("database"));
    for (const auto& p : meta.at("library")) corpus.library.push_back(prototype_from_json(p));
  } catch (const json::exception& e) {
    throw DataError("malformed dataset.json: " + std::string(e.what()));
  }

  std::ifstream man(root / "manifest.jsonl");
  if (!man) throw DataError("cannot open " + (root / "manifest.jsonl").string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(man, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      corpus.records.push_back(record_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw DataError("manifest.jsonl line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (corpus.records.empty()) throw DataError("manifest.jsonl has no records");
  return corpus;
}

// ---------------------------------------------------------------- PPM

void write_ppm(const std::filesystem::path& path, const Tensor& rgb) {
  if (rgb.rank() != 3 || rgb.dim(0) != 3) throw DimensionError("write_ppm: expected [3, H, W], got " + shape_str(rgb.shape()));
  const auto h = rgb.dim(1), w = rgb.dim(2);
  const auto hw = static_cast<std::size_t>(h * w);
  std::ofstream os(path, std::ios::binary);
  os << "P6\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> buf(3 * hw);
  const auto d = rgb.data();
  for (std::size_t i = 0; i < hw; ++i)
    for (std::size_t c = 0; c < 3; ++c) {
      buf[3 * i + c] = static_cast<unsigned char>(std::lround(std::clamp(d[c * hw + i], 0.0, 1.0) * 255.0));
    }
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!os) throw DataError("cannot write " + path.string());
}

Tensor read_ppm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  std::string magic;
  std::int64_t w = 0, h = 0, maxval = 0;
  is >> magic >> w >> h >> maxval;
  if (magic != "P6" || w < 1 || h < 1 || maxval != 255) throw DataError(path.string() + ": not an 8-bit P6 image");
  is.get();
  const auto hw = static_cast<std::size_t>(h * w);
  std::vector<unsigned char> buf(3 * hw);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!is) throw DataError(path.string() + ": truncated pixel data");
  std::vector<double> out(3 * hw);
  for (std::size_t i = 0; i < hw; ++i)
    for (std::size_t c = 0; c < 3; ++c) out[c * hw + i] = buf[3 * i + c] / 255.0;
  return Tensor::from({1, 3, h, w}, std::move(out));
}

}  // namespace nutri
