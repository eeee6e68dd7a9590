#include "nutri/config.hpp"

#include <charconv>
#include <functional>
#include <limits>
#include <sstream>

#include "nutri/errors.hpp"

namespace nutri {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t") - b + 1);
}

[[noreturn]] void bad(const std::string& key, const std::string& value, const std::string& why) {
  throw ConfigError(key + ": invalid value '" + value + "' (" + why + ")");
}

template <typename T>
T parse_number(const std::string& key, const std::string& raw) {
  const auto v = trim(raw);
  T out{};
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (v.empty() || ec != std::errc() || ptr != end) bad(key, raw, "expected a number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& raw) {
  const auto v = trim(raw);
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  bad(key, raw, "expected true or false");
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& raw) {
  std::vector<T> out;
  std::stringstream ss(raw);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<T>(key, item));
  if (out.empty()) bad(key, raw, "expected a comma-separated list");
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string fmt(bool v) { return v ? "true" : "false"; }

template <typename T>
std::string fmt_list(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_floating_point_v<T>) {
      out += fmt(static_cast<double>(v[i]));
    } else {
      out += std::to_string(v[i]);
    }
  }
  return out;
}

struct Entry {
  ConfigKey info;
  std::function<void(Config&, const std::string&)> set;
  std::function<std::string(const Config&)> get;
};

const std::vector<Entry>& registry() {
  static const std::vector<Entry> entries = [] {
    std::vector<Entry> e;
    auto str = [&e](std::string key, std::string help, auto field) {
      e.push_back({{key, std::move(help)},
                   [field, key](Config& c, const std::string& v) {
                     if (trim(v).empty()) bad(key, v, "must not be empty");
                     field(c) = trim(v);
                   },
                   [field](const Config& c) { return field(const_cast<Config&>(c)); }});
    };
    auto real = [&e](std::string key, std::string help, auto field, double lo, double hi, bool open_lo) {
      e.push_back({{key, std::move(help)},
                   [=](Config& c, const std::string& v) {
                     const double x = parse_number<double>(key, v);
                     if (!(open_lo ? x > lo : x >= lo) || !(x <= hi)) {
                       bad(key, v, "must be in " + std::string(open_lo ? "(" : "[") + fmt(lo) + ", " + fmt(hi) + "]");
                     }
                     field(c) = x;
                   },
                   [field](const Config& c) { return fmt(field(const_cast<Config&>(c))); }});
    };
    auto integer = [&e](std::string key, std::string help, auto field, std::int64_t lo, std::int64_t hi) {
      e.push_back({{key, std::move(help)},
                   [=](Config& c, const std::string& v) {
                     const auto x = parse_number<std::int64_t>(key, v);
                     if (x < lo || x > hi) bad(key, v, "must be in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
                     field(c) = static_cast<std::remove_reference_t<decltype(field(c))>>(x);
                   },
                   [field](const Config& c) { return std::to_string(field(const_cast<Config&>(c))); }});
    };
    auto seed = [&e](std::string key, std::string help, auto field) {
      e.push_back({{key, std::move(help)},
                   [=](Config& c, const std::string& v) { field(c) = parse_number<std::uint64_t>(key, v); },
                   [field](const Config& c) { return std::to_string(field(const_cast<Config&>(c))); }});
    };
    auto flag = [&e](std::string key, std::string help, auto field) {
      e.push_back({{key, std::move(help)},
                   [=](Config& c, const std::string& v) { field(c) = parse_bool(key, v); },
                   [field](const Config& c) { return fmt(static_cast<bool>(field(const_cast<Config&>(c)))); }});
    };
    constexpr auto kBig = std::numeric_limits<int>::max();
    constexpr double kInf = std::numeric_limits<double>::infinity();

    str("data.root", "corpus directory", [](Config& c) -> std::string& { return c.data.root; });
    integer("data.canvas", "scene size in pixels", [](Config& c) -> std::int64_t& { return c.data.synth.canvas; }, 8, 4096);
    integer("data.samples", "scene count", [](Config& c) -> std::size_t& { return c.data.synth.samples; }, 2, 10'000'000);
    seed("data.seed", "master seed for scenes and split", [](Config& c) -> std::uint64_t& { return c.data.synth.seed; });
    seed("data.library_seed", "seed for the item prototype library",
         [](Config& c) -> std::uint64_t& { return c.data.synth.library_seed; });
    integer("data.library_size", "number of item prototypes",
            [](Config& c) -> std::size_t& { return c.data.synth.library_size; }, 1, 100000);
    integer("data.min_items", "fewest items per scene", [](Config& c) -> int& { return c.data.synth.layout.min_items; }, 1, 1000);
    integer("data.max_items", "most items per scene", [](Config& c) -> int& { return c.data.synth.layout.max_items; }, 1, 1000);
    real("data.scale_min", "smallest area scale", [](Config& c) -> double& { return c.data.synth.layout.scale_min; }, 0, kInf, true);
    real("data.scale_max", "largest area scale", [](Config& c) -> double& { return c.data.synth.layout.scale_max; }, 0, kInf, true);
    real("data.edge_allowance", "fraction of the canvas item centers may fall outside",
         [](Config& c) -> double& { return c.data.synth.layout.edge_allowance; }, 0, 1, false);
    integer("data.split_train", "train part of the split ratio", [](Config& c) -> int& { return c.data.synth.split_train; }, 0, 1000);
    integer("data.split_test", "test part of the split ratio", [](Config& c) -> int& { return c.data.synth.split_test; }, 0, 1000);
    flag("data.preview", "also write 8-bit PPM previews", [](Config& c) -> bool& { return c.data.synth.export_preview; });
    str("data.depth_provider", "file | synthetic-corruptor", [](Config& c) -> std::string& { return c.data.depth_provider; });
    real("data.depth_a", "corruptor scale a (d_mono = (d - b) / a)", [](Config& c) -> double& { return c.data.corruption.a; }, -kInf, kInf, false);
    real("data.depth_b", "corruptor shift b", [](Config& c) -> double& { return c.data.corruption.b; }, -kInf, kInf, false);
    real("data.depth_distortion", "corruptor smooth distortion amplitude",
         [](Config& c) -> double& { return c.data.corruption.distortion_amp; }, 0, kInf, false);
    real("data.depth_noise", "corruptor noise standard deviation",
         [](Config& c) -> double& { return c.data.corruption.noise_sd; }, 0, kInf, false);

    integer("model.input_size", "network input resolution", [](Config& c) -> std::int64_t& { return c.model.input_size; }, 4, 4096);
    e.push_back({{"model.widths", "encoder stage widths, comma-separated"},
                 [](Config& c, const std::string& v) {
                   auto w = parse_list<std::int64_t>("model.widths", v);
                   for (std::size_t i = 0; i < w.size(); ++i) {
                     if (w[i] < 1 || (i && w[i] <= w[i - 1])) bad("model.widths", v, "must be positive and increasing");
                   }
                   c.model.widths = std::move(w);
                 },
                 [](const Config& c) { return fmt_list(c.model.widths); }});
    flag("model.fafm", "frequency-aligned fusion", [](Config& c) -> bool& { return c.model.use_fafm; });
    flag("model.ssra", "depth scale-shift-residual adapter", [](Config& c) -> bool& { return c.model.use_ssra; });
    flag("model.mph", "masked prediction head", [](Config& c) -> bool& { return c.model.use_mph; });
    flag("model.refiner", "residual refiner inside the depth adapter", [](Config& c) -> bool& { return c.model.ssra_refiner; });
    integer("model.refiner_hidden", "refiner hidden channels", [](Config& c) -> int& { return c.model.refiner_hidden; }, 1, 1024);
    e.push_back({{"model.kappa", "low-pass radius in [0, 1]; one value or one per stage"},
                 [](Config& c, const std::string& v) {
                   auto k = parse_list<double>("model.kappa", v);
                   for (double x : k) {
                     if (!(x >= 0.0 && x <= 1.0)) bad("model.kappa", v, "must be in [0, 1]");
                   }
                   c.model.kappas = std::move(k);
                 },
                 [](const Config& c) { return fmt_list(c.model.kappas); }});
    e.push_back({{"model.fusion_init", "average | random"},
                 [](Config& c, const std::string& v) {
                   const auto t = trim(v);
                   if (t == "average") {
                     c.model.fusion_init = FusionInit::kAverage;
                   } else if (t == "random") {
                     c.model.fusion_init = FusionInit::kRandom;
                   } else {
                     bad("model.fusion_init", v, "expected average or random");
                   }
                 },
                 [](const Config& c) {
                   return std::string(c.model.fusion_init == FusionInit::kAverage ? "average" : "random");
                 }});
    integer("model.unify_width", "token width in the prediction head",
            [](Config& c) -> std::int64_t& { return c.model.unify_width; }, 1, 4096);
    integer("model.unify_grid", "token grid side in the prediction head",
            [](Config& c) -> std::int64_t& { return c.model.unify_grid; }, 1, 64);
    integer("model.attn_dim", "attention projection width", [](Config& c) -> std::int64_t& { return c.model.attn_dim; }, 1, 4096);
    real("model.mask_k_fraction", "channels kept by the hard mask", [](Config& c) -> double& { return c.model.mask_k_fraction; }, 0, 1, true);
    flag("model.hard_mask", "top-k channel mask at inference", [](Config& c) -> bool& { return c.model.hard_mask_inference; });

    real("loss.tau", "alignment temperature", [](Config& c) -> double& { return c.loss.tau; }, 0, kInf, true);
    real("loss.lambda", "alignment loss weight", [](Config& c) -> double& { return c.loss.lambda; }, 0, kInf, false);
    real("loss.smoothing", "task-weight smoothing factor", [](Config& c) -> double& { return c.loss.smoothing; }, 0, 1, true);
    real("loss.kpi_eps", "KPI clamp epsilon", [](Config& c) -> double& { return c.loss.kpi_eps; }, 0, 1, true);
    real("loss.depth_weight", "auxiliary depth L2 weight", [](Config& c) -> double& { return c.loss.depth_weight; }, 0, kInf, false);

    real("optim.lr", "peak learning rate", [](Config& c) -> double& { return c.optim.lr; }, 0, kInf, true);
    real("optim.weight_decay", "L2 weight decay", [](Config& c) -> double& { return c.optim.weight_decay; }, 0, kInf, false);
    real("optim.beta1", "Adam beta1", [](Config& c) -> double& { return c.optim.beta1; }, 0, 1, false);
    real("optim.beta2", "Adam beta2", [](Config& c) -> double& { return c.optim.beta2; }, 0, 1, false);
    real("optim.eps", "Adam epsilon", [](Config& c) -> double& { return c.optim.eps; }, 0, kInf, true);
    str("optim.schedule", "cosine | constant", [](Config& c) -> std::string& { return c.optim.schedule; });

    integer("train.epochs", "training epochs", [](Config& c) -> int& { return c.train.epochs; }, 0, kBig);
    integer("train.batch_size", "minibatch size", [](Config& c) -> int& { return c.train.batch_size; }, 1, kBig);
    seed("train.seed", "initialization and shuffling seed", [](Config& c) -> std::uint64_t& { return c.train.seed; });
    real("train.val_fraction", "share of the train split held out for epoch selection",
         [](Config& c) -> double& { return c.train.val_fraction; }, 0, 0.9, false);
    integer("train.checkpoint_every", "epochs between periodic checkpoints (0: off)",
            [](Config& c) -> int& { return c.train.checkpoint_every; }, 0, kBig);
    str("train.out", "run output directory", [](Config& c) -> std::string& { return c.train.out; });
    str("train.preset", "none | baseline | +fafm | +ssra | +mph", [](Config& c) -> std::string& { return c.train.preset; });
    flag("train.verbose", "per-epoch log lines on stderr", [](Config& c) -> bool& { return c.train.verbose; });
    return e;
  }();
  return entries;
}

const Entry& entry(const std::string& key) {
  for (const auto& e : registry()) {
    if (e.info.key == key) return e;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> out;
    for (const auto& e : registry()) out.push_back(e.info);
    return out;
  }();
  return keys;
}

void Config::set(const std::string& key, const std::string& value) { entry(key).set(*this, value); }

std::string Config::get(const std::string& key) const { return entry(key).get(*this); }

void Config::validate() const {
  const auto& l = data.synth.layout;
  if (l.max_items < l.min_items) throw ConfigError("data.max_items must be >= data.min_items");
  if (l.scale_max < l.scale_min) throw ConfigError("data.scale_max must be >= data.scale_min");
  if (data.synth.split_train + data.synth.split_test == 0) throw ConfigError("data.split_train + data.split_test must be > 0");
  if (data.depth_provider != "file" && data.depth_provider != "synthetic-corruptor") {
    throw ConfigError("data.depth_provider: expected file or synthetic-corruptor, got '" + data.depth_provider + "'");
  }
  if (data.corruption.a == 0.0) throw ConfigError("data.depth_a must be nonzero");
  if (optim.schedule != "cosine" && optim.schedule != "constant") {
    throw ConfigError("optim.schedule: expected cosine or constant, got '" + optim.schedule + "'");
  }
  if (train.preset != "none") {
    bool known = false;
    for (const auto& r : kAblationRows) known = known || r == train.preset;
    if (!known) throw ConfigError("train.preset: expected none, baseline, +fafm, +ssra or +mph, got '" + train.preset + "'");
  }
  if (model.kappas.size() != 1 && model.kappas.size() != model.widths.size()) {
    throw ConfigError("model.kappa: give one value or one per encoder stage");
  }
  const std::int64_t factor = std::int64_t{1} << model.widths.size();
  if (model.input_size < factor) {
    throw ConfigError("model.input_size " + std::to_string(model.input_size) + " is too small for " +
                      std::to_string(model.widths.size()) + " stride-2 stages");
  }
  if (model.input_size / factor < model.unify_grid) {
    throw ConfigError("model.unify_grid " + std::to_string(model.unify_grid) + " exceeds the " +
                      std::to_string(model.input_size / factor) + "x" + std::to_string(model.input_size / factor) +
                      " deepest feature map");
  }
}

void Config::apply_preset() {
  if (train.preset != "none") apply_ablation_row(model, train.preset);
}

std::map<std::string, std::string> Config::to_map() const {
  std::map<std::string, std::string> out;
  for (const auto& e : registry()) out[e.info.key] = e.get(*this);
  return out;
}

Config Config::from_map(const std::map<std::string, std::string>& values) {
  Config c;
  for (const auto& [k, v] : values) c.set(k, v);
  c.validate();
  return c;
}

std::string Config::to_ini() const {
  std::string out, section;
  for (const auto& e : registry()) {
    const auto dot = e.info.key.find('.');
    const auto sec = e.info.key.substr(0, dot);
    if (sec != section) {
      out += (section.empty() ? "[" : "\n[") + sec + "]\n";
      section = sec;
    }
    out += e.info.key.substr(dot + 1) + " = " + e.get(*this) + "\n";
  }
  return out;
}

void apply_ablation_row(ModelConfig& model, const std::string& row) {
  if (row == "baseline") {
    model.use_fafm = model.use_ssra = model.use_mph = false;
  } else if (row == "+fafm") {
    model.use_fafm = true;
    model.use_ssra = model.use_mph = false;
  } else if (row == "+ssra") {
    model.use_fafm = model.use_ssra = true;
    model.use_mph = false;
  } else if (row == "+mph") {
    model.use_fafm = model.use_ssra = model.use_mph = true;
  } else {
    throw ConfigError("unknown ablation row '" + row + "'");
  }
}

}  // namespace nutri
