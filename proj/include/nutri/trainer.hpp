#pragma once

// Training, evaluation and the experiment flows behind the CLI.

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "nutri/checkpoint.hpp"
#include "nutri/config.hpp"
#include "nutri/dataset.hpp"
#include "nutri/losses.hpp"
#include "nutri/model.hpp"
#include "nutri/report.hpp"

namespace nutri {

struct EpochLog {
  int epoch = 0;  // 1-based
  double lr = 0.0;
  double train_loss = 0.0;        // mean over batches
  double train_mean_pmae = 0.0;   // percent, training-mode predictions
  std::optional<double> val_mean_pmae;
  TaskWeights weights;            // after this epoch's update
  double seconds = 0.0;
};

struct TrainOutcome {
  std::shared_ptr<NutritionModel> model;  // holds the selected epoch's parameters
  Checkpoint checkpoint;                  // selected parameters plus final optimizer and weight state
  std::vector<EpochLog> log;
  int selected_epoch = 0;                 // 0 when no epoch ran
};

// Trains on `train`, selecting the epoch with the lowest validation mean
// PMAE when `val` is nonempty (the final epoch otherwise). `init` seeds the
// parameters for fine-tuning; optimizer state and task weights start fresh
// either way. When `out_dir` is nonempty, writes best.ckpt, final.ckpt,
// periodic checkpoints and log.jsonl there. A non-finite value aborts with
// NumericIntegrityError after saving last_good.ckpt.
TrainOutcome train_model(const Config& cfg, const SampleSet& train, const SampleSet& val,
                         const Checkpoint* init = nullptr, std::ostream* log = nullptr,
                         const std::filesystem::path& out_dir = {});

std::vector<NutritionVector> predict_all(const NutritionModel& model, const SampleSet& set, int batch_size);
PmaeReport evaluate_model(const NutritionModel& model, const SampleSet& set, int batch_size);

Checkpoint make_checkpoint(const NutritionModel& model, const Config& cfg, int epoch, const TaskWeights& weights);
// Rebuilds the model described by the checkpoint's config and loads its values.
std::shared_ptr<NutritionModel> model_from_checkpoint(const Checkpoint& ckpt);
Config config_from_checkpoint(const Checkpoint& ckpt);

// Loads data.root, generating it first when absent. Throws DataError when
// an existing corpus was generated with different settings.
Corpus ensure_corpus(const Config& cfg);

struct Experiment {
  Corpus corpus;
  SampleSet train;  // train split minus the validation slice
  SampleSet val;
  SampleSet test;
};

Experiment prepare_experiment(const Config& cfg);

// Trains and evaluates the four cumulative rows on the test split under
// one seed.
std::vector<ReportRow> run_ablation(const Config& base, const Experiment& data, std::ostream* log = nullptr,
                                    const std::filesystem::path& out_dir = {});

}  // namespace nutri
