#include "nutri/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>

#include <json.hpp>

#include "nutri/errors.hpp"
#include "nutri/freq_fusion.hpp"
#include "nutri/ops.hpp"
#include "nutri/optim.hpp"

namespace nutri {

using json = nlohmann::json;

namespace {

ParamList persisted(const NutritionModel& model) {
  ParamList all = model.params();
  all.append("", model.buffers());
  return all;
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

// Output scale at the per-task train means and a head bias giving
// softplus(bias) == 1, so an untrained model starts near the mean predictor.
void init_head(NutritionModel& model, const SampleSet& train) {
  NutritionVector m;
  for (std::size_t i = 0; i < train.count(); ++i) m += train[i].label;
  m = (1.0 / static_cast<double>(train.count())) * m;
  auto scale = model.head().output_scale();
  auto s = scale.mutable_data();
  for (std::size_t i = 0; i < kNumTasks; ++i) s[i] = m[i] > 0.0 ? m[i] : 1.0;
  auto bias = model.head().bias();
  for (auto& b : bias.mutable_data()) b = std::log(std::exp(1.0) - 1.0);
}

void check_compatible(const Checkpoint& ckpt, const NutritionModel& model) {
  // Shape differences are reported tensor by tensor by restore(); this
  // catches configs that keep every shape but change the computation.
  restore(persisted(model), ckpt.tensors);
  if (ckpt.fingerprint != model.config().fingerprint()) {
    throw ConfigError("incompatible checkpoint: architecture fingerprint differs\n  checkpoint: " + ckpt.fingerprint +
                      "\n  config:     " + model.config().fingerprint());
  }
}

json epoch_json(const EpochLog& e) {
  json j = {{"record", "epoch"},
            {"epoch", e.epoch},
            {"lr", e.lr},
            {"train_loss", e.train_loss},
            {"train_mean_pmae", e.train_mean_pmae},
            {"task_weights", std::vector<double>(e.weights.w.begin(), e.weights.w.end())},
            {"seconds", e.seconds}};
  j["val_mean_pmae"] = e.val_mean_pmae ? json(*e.val_mean_pmae) : json(nullptr);
  return j;
}

}  // namespace

std::vector<NutritionVector> predict_all(const NutritionModel& model, const SampleSet& set, int batch_size) {
  std::vector<NutritionVector> out;
  out.reserve(set.count());
  const auto bs = static_cast<std::size_t>(std::max(1, batch_size));
  for (std::size_t start = 0; start < set.count(); start += bs) {
    const auto idx = iota(std::min(bs, set.count() - start));
    std::vector<std::size_t> ids(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) ids[k] = start + k;
    const auto b = set.batch(ids);
    const auto pred = model.predict(b.rgb, b.mono);
    const auto d = pred.data();
    for (std::size_t k = 0; k < ids.size(); ++k) {
      NutritionVector v;
      for (std::size_t i = 0; i < kNumTasks; ++i) v[i] = d[k * kNumTasks + i];
      out.push_back(v);
    }
  }
  return out;
}

PmaeReport evaluate_model(const NutritionModel& model, const SampleSet& set, int batch_size) {
  if (set.empty()) throw DataError("evaluate: split is empty");
  return evaluate_pmae(set.labels(), predict_all(model, set, batch_size));
}

Checkpoint make_checkpoint(const NutritionModel& model, const Config& cfg, int epoch, const TaskWeights& weights) {
  Checkpoint c;
  c.config = cfg.to_map();
  c.fingerprint = model.config().fingerprint();
  c.epoch = epoch;
  c.weights = weights;
  c.tensors = snapshot(persisted(model));
  return c;
}

Config config_from_checkpoint(const Checkpoint& ckpt) { return Config::from_map(ckpt.config); }

std::shared_ptr<NutritionModel> model_from_checkpoint(const Checkpoint& ckpt) {
  const auto cfg = config_from_checkpoint(ckpt);
  auto model = std::make_shared<NutritionModel>(cfg.model, cfg.train.seed);
  check_compatible(ckpt, *model);
  return model;
}

TrainOutcome train_model(const Config& cfg, const SampleSet& train, const SampleSet& val, const Checkpoint* init,
                         std::ostream* log, const std::filesystem::path& out_dir) {
  cfg.validate();
  if (train.empty()) throw DataError("train: no training samples");
  if (train.size() != cfg.model.input_size) {
    throw ConfigError("train: samples are " + std::to_string(train.size()) + " px but model.input_size is " +
                      std::to_string(cfg.model.input_size));
  }
  TrainOutcome out;
  out.model = std::make_shared<NutritionModel>(cfg.model, cfg.train.seed);
  auto& model = *out.model;
  if (init) {
    check_compatible(*init, model);
  } else {
    init_head(model, train);
  }

  std::ofstream log_file;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    log_file.open(out_dir / "log.jsonl");
    if (!log_file) throw DataError("cannot write " + (out_dir / "log.jsonl").string());
  }

  Adam adam(model.params(), {cfg.optim.lr, cfg.optim.beta1, cfg.optim.beta2, cfg.optim.eps, cfg.optim.weight_decay});
  TaskWeights tw;
  tw.smoothing = cfg.loss.smoothing;
  const bool use_align = cfg.model.depth_active() && cfg.loss.lambda > 0.0;
  const bool use_depth_aux = cfg.model.use_ssra && cfg.loss.depth_weight > 0.0;

  auto save = [&](const std::string& name, const Checkpoint& c) {
    if (!out_dir.empty()) save_checkpoint(out_dir / name, c);
  };
  auto full_checkpoint = [&](int epoch) {
    auto c = make_checkpoint(model, cfg, epoch, tw);
    c.optimizer = adam.state();
    c.optimizer_steps = adam.steps();
    return c;
  };

  Checkpoint last_good = full_checkpoint(0);
  std::vector<NamedTensor> best_values = last_good.tensors;
  double best_val = std::numeric_limits<double>::infinity();
  out.selected_epoch = 0;

  const auto bs = static_cast<std::size_t>(cfg.train.batch_size);
  for (int epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr =
        cfg.optim.schedule == "cosine" ? cosine_lr(cfg.optim.lr, epoch, cfg.train.epochs) : cfg.optim.lr;
    adam.set_lr(lr);

    auto order = iota(train.count());
    Rng rng(derive_seed(cfg.train.seed, 0x5F00 + static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[static_cast<std::size_t>(rng() % i)]);

    std::vector<NutritionVector> seen_truth, seen_pred;
    double loss_sum = 0.0;
    std::size_t batches = 0;
    try {
      for (std::size_t start = 0; start < order.size(); start += bs) {
        const std::span<const std::size_t> ids(order.data() + start, std::min(bs, order.size() - start));
        const auto b = train.batch(ids);
        const auto res = model.forward(b.rgb, b.mono, true);
        auto loss = nutri_loss(res.prediction, b.targets, tw);
        if (use_align) loss = total_loss(loss, alignment_loss(res.align_rgb, res.align_depth, cfg.loss.tau), cfg.loss.lambda);
        if (use_depth_aux) {
          const auto diff = sub(res.adapted_depth, b.depth_gt);
          loss = add(loss, scale(mean(mul(diff, diff)), cfg.loss.depth_weight));
        }
        backward(loss);
        adam.step();
        model.params().zero_grad();

        loss_sum += loss.item();
        ++batches;
        const auto p = res.prediction.data();
        for (std::size_t k = 0; k < ids.size(); ++k) {
          NutritionVector v;
          for (std::size_t i = 0; i < kNumTasks; ++i) v[i] = p[k * kNumTasks + i];
          seen_pred.push_back(v);
          seen_truth.push_back(train[ids[k]].label);
        }
      }
    } catch (const NumericIntegrityError& e) {
      std::string where;
      if (!out_dir.empty()) {
        save_checkpoint(out_dir / "last_good.ckpt", last_good);
        where = "; last good state (epoch " + std::to_string(last_good.epoch) + ") saved to " +
                (out_dir / "last_good.ckpt").string();
      }
      throw NumericIntegrityError("training diverged in epoch " + std::to_string(epoch + 1) + ": " + e.what() + where);
    }

    // Epoch-level PMAE drives the next epoch's task weights.
    const auto epoch_pmae = evaluate_pmae(seen_truth, seen_pred);
    std::array<double, kNumTasks> kpis{};
    for (std::size_t i = 0; i < kNumTasks; ++i) kpis[i] = kpi(epoch_pmae.task_percent[i] / 100.0, cfg.loss.kpi_eps);
    tw = update_weights(tw, kpis);

    EpochLog e;
    e.epoch = epoch + 1;
    e.lr = lr;
    e.train_loss = loss_sum / static_cast<double>(batches);
    e.train_mean_pmae = epoch_pmae.mean_percent;
    e.weights = tw;
    if (!val.empty()) e.val_mean_pmae = evaluate_model(model, val, cfg.train.batch_size).mean_percent;
    e.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.log.push_back(e);

    const double score = e.val_mean_pmae.value_or(0.0);
    if (val.empty() || score < best_val) {
      best_val = score;
      best_values = snapshot(persisted(model));
      out.selected_epoch = e.epoch;
      if (!val.empty()) save("best.ckpt", full_checkpoint(e.epoch));
    }
    last_good = full_checkpoint(e.epoch);
    if (cfg.train.checkpoint_every > 0 && e.epoch % cfg.train.checkpoint_every == 0) {
      save("epoch_" + std::to_string(e.epoch) + ".ckpt", last_good);
    }

    if (log_file.is_open()) log_file << epoch_json(e).dump() << "\n" << std::flush;
    if (log && cfg.train.verbose) {
      *log << "epoch " << e.epoch << "/" << cfg.train.epochs << std::scientific << std::setprecision(2) << "  lr "
           << e.lr << std::fixed << std::setprecision(4) << "  loss " << e.train_loss << std::setprecision(2)
           << "  train " << e.train_mean_pmae << "%";
      if (e.val_mean_pmae) *log << "  val " << *e.val_mean_pmae << "%";
      *log << "  w [";
      for (std::size_t i = 0; i < kNumTasks; ++i) *log << (i ? " " : "") << std::setprecision(3) << tw.w[i];
      *log << "]  " << std::setprecision(1) << e.seconds << "s\n" << std::flush;
    }
  }

  save("final.ckpt", last_good);
  restore(persisted(model), best_values);
  out.checkpoint = make_checkpoint(model, cfg, out.selected_epoch, tw);
  out.checkpoint.optimizer = adam.state();
  out.checkpoint.optimizer_steps = adam.steps();
  if (val.empty() && !out_dir.empty()) save("best.ckpt", out.checkpoint);
  return out;
}

Corpus ensure_corpus(const Config& cfg) {
  const std::filesystem::path root = cfg.data.root;
  if (std::filesystem::exists(root / "manifest.jsonl")) {
    auto corpus = load_corpus(root);
    if (!(corpus.config == cfg.data.synth)) {
      throw DataError("corpus at " + root.string() +
                      " was generated with different data.* settings; choose another data.root or delete it");
    }
    return corpus;
  }
  return gen_dataset(cfg.data.synth, root);
}

Experiment prepare_experiment(const Config& cfg) {
  cfg.validate();
  if (cfg.data.synth.canvas < cfg.model.input_size) {
    throw ConfigError("data.canvas " + std::to_string(cfg.data.synth.canvas) + " is smaller than model.input_size " +
                      std::to_string(cfg.model.input_size));
  }
  Experiment ex;
  ex.corpus = ensure_corpus(cfg);
  const auto provider = make_depth_provider(cfg.data.depth_provider, cfg.data.corruption);
  const auto train_all = load_split(ex.corpus, "train", cfg.model.input_size, *provider);
  ex.test = load_split(ex.corpus, "test", cfg.model.input_size, *provider);
  if (train_all.empty()) throw DataError("train split is empty");
  const auto [tr, va] = holdout(train_all.count(), cfg.train.val_fraction, cfg.train.seed);
  ex.train = train_all.select(tr);
  ex.val = train_all.select(va);
  return ex;
}

std::vector<ReportRow> run_ablation(const Config& base, const Experiment& data, std::ostream* log,
                                    const std::filesystem::path& out_dir) {
  if (data.test.empty()) throw DataError("ablate: test split is empty");
  std::vector<ReportRow> rows;
  for (const auto& row : kAblationRows) {
    Config cfg = base;
    cfg.train.preset = row;
    cfg.apply_preset();
    if (log) *log << "== " << row << "\n";
    const auto sub = out_dir.empty() ? std::filesystem::path{} : out_dir / row;
    const auto outcome = train_model(cfg, data.train, data.val, nullptr, log, sub);
    rows.push_back({row, evaluate_model(*outcome.model, data.test, cfg.train.batch_size)});
  }
  return rows;
}

}  // namespace nutri
