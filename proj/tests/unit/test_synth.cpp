#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "nutri/errors.hpp"
#include "nutri/synth.hpp"
#include "nutri/tensor_io.hpp"

using namespace nutri;
namespace fs = std::filesystem;

namespace {

ItemPrototype disc(double radius, const NutrientDatabase& db, const std::string& name = "white_rice") {
  ItemPrototype p;
  p.ingredient = name;
  p.color = db.lookup(name).color;
  p.radius_x = p.radius_y = radius;
  p.rotation = 0.0;
  p.max_height = 0.04;
  p.mass_density = 0.2;
  for (std::size_t i = 0; i < kNumTasks; ++i) p.density[i] = p.mass_density / 100.0 * db.lookup(name).per_100g[i];
  p.density[1] = p.mass_density;
  return p;
}

void check_close(const NutritionVector& a, const NutritionVector& b, double rel) {
  for (std::size_t i = 0; i < kNumTasks; ++i) CHECK(std::fabs(a[i] - b[i]) <= rel * std::max(1.0, std::fabs(b[i])));
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("ingredient annotation") {
  NutrientDatabase db;
  IngredientInfo info;
  info.per_100g.values = {150, 100, 5, 20, 8};
  db.add("dumpling", info);
  info.per_100g.values = {40, 100, 0, 9, 1};
  db.add("soup", info);
  const auto one = annotate_from_ingredients({{"dumpling", 200}}, db);
  CHECK(one.calories() == doctest::Approx(300));
  CHECK(one.mass() == doctest::Approx(200));
  CHECK(one.fat() == doctest::Approx(10));
  const auto both = annotate_from_ingredients({{"dumpling", 200}, {"soup", 50}}, db);
  check_close(both, one + annotate_from_ingredients({{"soup", 50}}, db), 1e-12);
  CHECK(both.mass() == doctest::Approx(250));
  CHECK_THROWS_AS(annotate_from_ingredients({{"pizza", 1}}, db), DataError);
  info.per_100g.values = {-1, 100, 0, 0, 0};
  CHECK_THROWS_AS(db.add("bad", info), DataError);
  CHECK(NutrientDatabase::builtin().size() >= 12);
}

TEST_CASE("prototypes are deterministic and within range") {
  const auto db = NutrientDatabase::builtin();
  const PrototypeRanges r;
  const auto a = gen_prototype(17, r, db), b = gen_prototype(17, r, db);
  CHECK(a.radius_x == b.radius_x);
  CHECK(a.density == b.density);
  CHECK(a.ingredient == b.ingredient);
  for (std::uint64_t s = 0; s < 1000; ++s) {
    const auto p = gen_prototype(s, r, db);
    CHECK(p.radius_x >= r.radius_min);
    CHECK(p.radius_x <= r.radius_max);
    CHECK(p.mass_density >= r.mass_density_min);
    CHECK(p.mass_density <= r.mass_density_max);
    CHECK(p.max_height >= r.height_min);
    CHECK(p.max_height <= r.height_max);
    CHECK(p.density.mass() == p.mass_density);
    const auto& per100 = db.lookup(p.ingredient).per_100g;
    for (std::size_t i = 0; i < kNumTasks; ++i) CHECK(p.density[i] == doctest::Approx(p.mass_density / 100.0 * per100[i]));
    CHECK(p.area() > 0.0);
    CHECK(p.height_at(1.01 * p.bounding_radius(), 0.0) == 0.0);
    CHECK(p.height_at(0.0, 0.0) == doctest::Approx(p.max_height));
  }
}

TEST_CASE("footprint area matches numerical integration") {
  ItemPrototype blob;
  blob.shape = FootprintShape::kBlob;
  blob.radius_x = 10.0;
  blob.harmonics = {0.08, -0.05, 0.1};
  blob.phases = {0.3, 1.7, 4.0};
  // Area = 1/2 integral of r(theta)^2.
  const int n = 20000;
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const double t = 2.0 * std::numbers::pi * (i + 0.5) / n;
    double e = 1.0;
    for (int k = 0; k < 3; ++k) e += blob.harmonics[k] * std::cos((k + 2) * t + blob.phases[k]);
    acc += 0.5 * std::pow(blob.radius_x * e, 2) * (2.0 * std::numbers::pi / n);
  }
  CHECK(blob.area() == doctest::Approx(acc).epsilon(1e-9));
  // Points on the boundary have normalized radius 1.
  const double t = 0.9;
  double e = 1.0;
  for (int k = 0; k < 3; ++k) e += blob.harmonics[k] * std::cos((k + 2) * t + blob.phases[k]);
  CHECK(blob.normalized_radius(10.0 * e * std::cos(t), 10.0 * e * std::sin(t)) == doctest::Approx(1.0));
}

TEST_CASE("labels follow placed geometry") {
  const auto db = NutrientDatabase::builtin();
  const std::vector<ItemPrototype> lib{disc(10.0, db), disc(8.0, db, "salmon")};
  const Placement centre{0, 64, 64, 1.0, 0.0, 1};

  SUBCASE("single item") {
    const auto s = label_from_layout(lib, {centre}, 128, 128);
    check_close(s.label, lib[0].total(), 1e-12);
    CHECK(s.unclipped[0] == 1.0);
    CHECK(s.ingredients[0].grams == doctest::Approx(std::numbers::pi * 100.0 * 0.2));
    check_close(annotate_from_ingredients(s.ingredients, db), s.label, 1e-9);
  }
  SUBCASE("doubling: two copies or twice the area") {
    const Placement other{0, 30, 30, 1.0, 0.3, 2};
    check_close(label_from_layout(lib, {centre, other}, 128, 128).label, 2.0 * lib[0].total(), 1e-12);
    const Placement big{0, 64, 64, 2.0, 0.0, 3};
    check_close(label_from_layout(lib, {big}, 128, 128).label, 2.0 * lib[0].total(), 1e-12);
    // Overlap does not change the label.
    const Placement overlapping{1, 66, 64, 1.0, 0.0, 4};
    check_close(label_from_layout(lib, {centre, overlapping}, 128, 128).label, lib[0].total() + lib[1].total(), 1e-12);
  }
  SUBCASE("half clipped at the edge") {
    for (double cy : {20.0, 64.0}) {
      const Placement edge{0, 0.0, cy, 1.0, 0.0, 5};
      const auto s = label_from_layout(lib, {edge}, 128, 128);
      CHECK(s.unclipped[0] == 0.5);
      check_close(s.label, 0.5 * lib[0].total(), 1e-12);
    }
    const Placement gone{0, -50.0, 64, 1.0, 0.0, 5};
    CHECK(label_from_layout(lib, {gone}, 128, 128).label == NutritionVector{});
  }
  SUBCASE("bad placements") {
    CHECK_THROWS_AS(label_from_layout(lib, {Placement{7, 1, 1, 1, 0, 0}}, 128, 128), DataError);
    CHECK_THROWS_AS(label_from_layout(lib, {Placement{0, 1, 1, 0, 0, 0}}, 128, 128), DataError);
  }
}

TEST_CASE("rendering: appearance does not move labels, depth follows heights") {
  const auto db = NutrientDatabase::builtin();
  auto lib = std::vector<ItemPrototype>{disc(12.0, db)};
  const std::vector<Placement> ps{{0, 40.5, 50.25, 1.0, 0.0, 9}};
  const auto a = compose_scene(lib, ps, 96, 96, 3);
  CHECK(a.rgb.shape() == Shape{3, 96, 96});
  CHECK(a.depth.shape() == Shape{1, 96, 96});
  for (double v : a.rgb.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  const RenderOptions opts;
  for (std::int64_t y = 0; y < 96; ++y)
    for (std::int64_t x = 0; x < 96; ++x) {
      const double expect = opts.baseline - lib[0].height_at(x + 0.5 - 40.5, y + 0.5 - 50.25);
      CHECK(a.depth.data()[static_cast<std::size_t>(y * 96 + x)] == doctest::Approx(expect).epsilon(1e-12));
    }

  auto recoloured = lib;
  recoloured[0].color = {0.1, 0.2, 0.9};
  recoloured[0].texture_seed = 999;
  auto ps2 = ps;
  ps2[0].texture_seed = 12345;
  const auto b = compose_scene(recoloured, ps2, 96, 96, 3);
  CHECK(b.label.label == a.label.label);
  CHECK(std::equal(a.depth.data().begin(), a.depth.data().end(), b.depth.data().begin()));
  CHECK_FALSE(std::equal(a.rgb.data().begin(), a.rgb.data().end(), b.rgb.data().begin()));

  // The tallest item wins where footprints overlap.
  lib.push_back(disc(6.0, db, "salmon"));
  lib[1].max_height = 0.02;
  const auto c = compose_scene(lib, {ps[0], {1, 40.5, 50.25, 1.0, 0.0, 1}}, 96, 96, 3);
  CHECK(std::equal(a.depth.data().begin(), a.depth.data().end(), c.depth.data().begin()));
}

TEST_CASE("random layouts are deterministic and respect the options") {
  const auto db = NutrientDatabase::builtin();
  const auto lib = make_prototype_library(6, 1, PrototypeRanges{}, db);
  LayoutOptions opts;
  opts.min_items = 2;
  opts.max_items = 4;
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto l = random_layout(lib, 128, 128, s, opts);
    CHECK(l.size() >= 2);
    CHECK(l.size() <= 4);
    for (const auto& p : l) {
      CHECK(p.prototype < lib.size());
      CHECK(p.scale >= opts.scale_min);
      CHECK(p.scale <= opts.scale_max);
      CHECK(std::hypot(p.cx - 64, p.cy - 64) <= (0.45 + opts.edge_allowance) * 128 + 1e-9);
    }
    const auto again = random_layout(lib, 128, 128, s, opts);
    REQUIRE(again.size() == l.size());
    for (std::size_t i = 0; i < l.size(); ++i) CHECK(again[i].cx == l[i].cx);
  }
}

TEST_CASE("split assignment") {
  const auto s = assign_splits(10, 7, 3, 5);
  CHECK(std::count(s.begin(), s.end(), "train") == 7);
  CHECK(std::count(s.begin(), s.end(), "test") == 3);
  CHECK(assign_splits(10, 7, 3, 5) == s);
  CHECK(assign_splits(10, 7, 3, 6) != s);
  const auto all = assign_splits(4, 1, 0, 1);
  CHECK(std::count(all.begin(), all.end(), "train") == 4);
  CHECK_THROWS_AS(assign_splits(4, 0, 0, 1), ConfigError);
}

TEST_CASE("corpus generation is reproducible and labels are recomputable") {
  SynthConfig cfg;
  cfg.canvas = 48;
  cfg.samples = 12;
  cfg.export_preview = true;
  const auto d1 = scratch("nutri_synth_a"), d2 = scratch("nutri_synth_b");
  const auto c1 = gen_dataset(cfg, d1);
  gen_dataset(cfg, d2);
  for (const auto& entry : fs::recursive_directory_iterator(d1)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), d1);
    CHECK(slurp(entry.path()) == slurp(d2 / rel));
  }

  const auto loaded = load_corpus(d1);
  CHECK(loaded.config == cfg);
  REQUIRE(loaded.records.size() == 12);
  REQUIRE(loaded.library.size() == cfg.library_size);
  for (std::size_t i = 0; i < loaded.records.size(); ++i) {
    const auto& r = loaded.records[i];
    CHECK(r.id.size() == 6);
    CHECK(r.split == c1.records[i].split);
    const auto again = label_from_layout(loaded.library, r.placements, cfg.canvas, cfg.canvas);
    check_close(again.label, r.label, 1e-9);
    check_close(annotate_from_ingredients(r.ingredients, loaded.database), r.label, 1e-9);
    const auto rgb = load_tensor(d1 / r.rgb_path);
    CHECK(rgb.shape() == Shape{3, 48, 48});
    const auto depth = load_tensor(d1 / r.depth_path);
    CHECK(depth.shape() == Shape{1, 48, 48});
    const auto ppm = read_ppm(d1 / "preview" / (r.id + ".ppm"));
    for (std::size_t k = 0; k < rgb.numel(); k += 97) CHECK(std::fabs(ppm.data()[k] - rgb.data()[k]) <= 0.5 / 255 + 1e-6);
  }

  cfg.samples = 1;
  CHECK_THROWS_AS(gen_dataset(cfg, scratch("nutri_synth_c")), ConfigError);
  CHECK_THROWS_AS(load_corpus(scratch("nutri_synth_missing")), DataError);
  fs::remove_all(d1);
  fs::remove_all(d2);
}
