// nutri: data generation, training, evaluation, prediction, ablation and
// fine-tuning from the command line.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 data error,
// 3 numeric failure.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include "nutri/checkpoint.hpp"
#include "nutri/config.hpp"
#include "nutri/errors.hpp"
#include "nutri/report.hpp"
#include "nutri/synth.hpp"
#include "nutri/tensor_io.hpp"
#include "nutri/trainer.hpp"

namespace fs = std::filesystem;
using namespace nutri;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

struct ConfigOptions {
  std::string file;
  std::map<std::string, std::string> values;
};

void add_config_options(CLI::App* sub, ConfigOptions& opts) {
  sub->add_option("-c,--config", opts.file, "config file with [section] key = value lines")->check(CLI::ExistingFile);
  for (const auto& k : config_keys()) {
    sub->add_option("--" + k.key, opts.values[k.key], k.help)->group("Config keys");
  }
}

void load_ini(Config& cfg, const fs::path& path) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(e.what());
  }
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError(path.string() + ": key '" + section + "' is outside any [section]");
    for (const auto& [key, value] : body) cfg.set(section + "." + key, value.data());
  }
}

// Defaults, then the config file, then explicit flags.
void apply(Config& cfg, const CLI::App* sub, const ConfigOptions& opts) {
  if (!opts.file.empty()) load_ini(cfg, opts.file);
  for (const auto& k : config_keys()) {
    if (sub->get_option("--" + k.key)->count() > 0) cfg.set(k.key, opts.values.at(k.key));
  }
  cfg.apply_preset();
  cfg.validate();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  os << text;
  if (!os) throw DataError("cannot write " + path.string());
}

void emit_report(const std::vector<ReportRow>& rows, const fs::path& out_dir, const std::string& stem) {
  const auto table = format_table(rows);
  const auto records = format_records(rows);
  std::cout << table << records;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_file(out_dir / (stem + ".txt"), table);
    write_file(out_dir / (stem + ".jsonl"), records);
  }
}

Tensor load_image(const fs::path& path) {
  if (path.extension() == ".ppm") return read_ppm(path);
  auto t = load_tensor(path);
  if (t.rank() == 3 && t.dim(0) == 3) return Tensor::from({1, 3, t.dim(1), t.dim(2)}, t.to_vector());
  if (t.rank() == 4 && t.dim(0) == 1 && t.dim(1) == 3) return t;
  throw DataError(path.string() + ": expected a [3, H, W] image, got " + shape_str(t.shape()));
}

int run(int argc, char** argv) {
  CLI::App app{"Food nutrition estimation from RGB images with adapted monocular depth"};
  app.require_subcommand(1);

  ConfigOptions gen_opts, train_opts, eval_opts, predict_opts, ablate_opts, ft_opts;
  std::string eval_ckpt, eval_split = "test", predict_ckpt, predict_image, predict_depth, ft_ckpt;
  std::uint64_t predict_seed = 0;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic corpus under data.root");
  add_config_options(gen, gen_opts);

  auto* train = app.add_subcommand("train", "train on data.root and evaluate on its test split");
  add_config_options(train, train_opts);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--split", eval_split, "train | val | test | all")
      ->check(CLI::IsMember({"train", "val", "test", "all"}));
  add_config_options(eval, eval_opts);

  auto* predict = app.add_subcommand("predict", "predict the nutrition of one image");
  predict->add_option("--checkpoint", predict_ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  predict->add_option("--image", predict_image, "RGB image (.ppm or [3,H,W] tensor file)")->required();
  predict->add_option("--depth", predict_depth, "depth file for the depth provider");
  predict->add_option("--depth-seed", predict_seed, "seed passed to the depth provider");
  add_config_options(predict, predict_opts);

  auto* ablate = app.add_subcommand("ablate", "train and compare baseline, +FAFM, +SSRA, +MPH");
  add_config_options(ablate, ablate_opts);

  auto* ft = app.add_subcommand("finetune", "continue training a checkpoint on another corpus");
  ft->add_option("--checkpoint", ft_ckpt, "pretrained checkpoint")->required()->check(CLI::ExistingFile);
  add_config_options(ft, ft_opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  if (gen->parsed()) {
    Config cfg;
    apply(cfg, gen, gen_opts);
    const auto corpus = gen_dataset(cfg.data.synth, cfg.data.root);
    std::size_t n_train = 0;
    for (const auto& r : corpus.records) n_train += r.split == "train";
    std::cout << "wrote " << corpus.records.size() << " scenes (" << n_train << " train, "
              << corpus.records.size() - n_train << " test) to " << cfg.data.root << "\n";
    return 0;
  }

  if (train->parsed()) {
    Config cfg;
    apply(cfg, train, train_opts);
    const auto ex = prepare_experiment(cfg);
    fs::create_directories(cfg.train.out);
    write_file(fs::path(cfg.train.out) / "config.ini", cfg.to_ini());
    const auto outcome = train_model(cfg, ex.train, ex.val, nullptr, &std::cerr, cfg.train.out);
    std::cerr << "selected epoch " << outcome.selected_epoch << "\n";
    emit_report({{"model", evaluate_model(*outcome.model, ex.test, cfg.train.batch_size)},
                 {"mean-predictor", mean_predictor_pmae(ex.test.labels())}},
                cfg.train.out, "report");
    return 0;
  }

  if (eval->parsed()) {
    const auto ckpt = load_checkpoint(eval_ckpt);
    Config cfg = config_from_checkpoint(ckpt);
    apply(cfg, eval, eval_opts);
    auto model = model_from_checkpoint(ckpt);
    if (model->config().fingerprint() != cfg.model.fingerprint()) {
      throw ConfigError("eval: model.* settings cannot be overridden for an existing checkpoint");
    }
    const auto ex = prepare_experiment(cfg);
    const SampleSet* set = &ex.test;
    SampleSet all;
    if (eval_split == "train") set = &ex.train;
    if (eval_split == "val") set = &ex.val;
    if (eval_split == "all") {
      const auto provider = make_depth_provider(cfg.data.depth_provider, cfg.data.corruption);
      all = load_split(ex.corpus, "all", cfg.model.input_size, *provider);
      set = &all;
    }
    if (set->empty()) throw DataError("eval: split '" + eval_split + "' is empty");
    emit_report({{"model", evaluate_model(*model, *set, cfg.train.batch_size)},
                 {"mean-predictor", mean_predictor_pmae(set->labels())}},
                {}, "");
    return 0;
  }

  if (predict->parsed()) {
    const auto ckpt = load_checkpoint(predict_ckpt);
    Config cfg = config_from_checkpoint(ckpt);
    apply(cfg, predict, predict_opts);
    auto model = model_from_checkpoint(ckpt);
    const auto rgb = resize_to(load_image(predict_image), cfg.model.input_size);
    Tensor mono;
    if (cfg.model.depth_active()) {
      if (predict_depth.empty()) throw ConfigError("predict: this model uses depth; pass --depth");
      const auto provider = make_depth_provider(cfg.data.depth_provider, cfg.data.corruption);
      mono = resize_to(provider->estimate(rgb, {predict_depth, predict_seed}), cfg.model.input_size);
    }
    const auto pred = model->predict(rgb, mono);
    NutritionVector v;
    for (std::size_t i = 0; i < kNumTasks; ++i) v[i] = pred.data()[i];
    std::cout << prediction_record(predict_image, v, model->config().fingerprint()) << "\n";
    return 0;
  }

  if (ablate->parsed()) {
    Config cfg;
    apply(cfg, ablate, ablate_opts);
    const auto ex = prepare_experiment(cfg);
    const auto rows = run_ablation(cfg, ex, &std::cerr, cfg.train.out);
    emit_report(rows, cfg.train.out, "ablation");
    return 0;
  }

  if (ft->parsed()) {
    const auto ckpt = load_checkpoint(ft_ckpt);
    // Architecture comes from the checkpoint; data, loss, optimizer and
    // training settings from the command line.
    Config cfg = config_from_checkpoint(ckpt);
    Config fresh;
    for (const auto& k : config_keys()) {
      if (k.key.rfind("model.", 0) != 0) cfg.set(k.key, fresh.get(k.key));
    }
    apply(cfg, ft, ft_opts);
    const auto ex = prepare_experiment(cfg);
    fs::create_directories(cfg.train.out);
    write_file(fs::path(cfg.train.out) / "config.ini", cfg.to_ini());
    const auto outcome = train_model(cfg, ex.train, ex.val, &ckpt, &std::cerr, cfg.train.out);
    emit_report({{"finetuned", evaluate_model(*outcome.model, ex.test, cfg.train.batch_size)},
                 {"mean-predictor", mean_predictor_pmae(ex.test.labels())}},
                cfg.train.out, "report");
    return 0;
  }
  return kExitUsage;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const NumericIntegrityError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const DegenerateInputError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}
