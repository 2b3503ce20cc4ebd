// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "nli/dataset.hpp"
#include "nli/models.hpp"
#include "nli/nn/training.hpp"

namespace nli::experiments {

inline const std::vector<double> kDefaultDurations = {1, 3, 5, 10, 20, 30, 60};

struct CvConfig {
    bool enabled = true;
    std::size_t k = 5;
    double duration_s = 5.0;
    dataset::Sampling sampling = dataset::Sampling::oversample;
};

/// Knobs shared by grid cells, CV runs and single training runs.
struct RunConfig {
    double holdout_fraction = 0.10;
    bool speaker_disjoint = false;
    /// Balance the whole manifest before splitting (leaks duplicates into
    /// the evaluation partitions; kept for comparison only).
    bool balance_before_split = false;
    nn::TrainConfig train;
    /// Architecture overrides; kind/frames/n_mfcc are filled per cell.
    models::ModelSpec model_template;
};

struct GridConfig {
    std::vector<double> durations = kDefaultDurations;
    std::vector<dataset::Sampling> samplings = {dataset::Sampling::oversample,
                                                dataset::Sampling::undersample,
                                                dataset::Sampling::none};
    std::vector<models::ModelKind> model_kinds = {models::ModelKind::ann, models::ModelKind::cnn,
                                                  models::ModelKind::rnn};
    CvConfig cv;
    std::uint64_t master_seed = 0;
    /// Holds one sub-directory of WAV files per class name.
    std::filesystem::path data_root;
    features::MfccConfig mfcc;
    int sample_rate = audio::kProcessingRate;
    RunConfig run;
    std::size_t jobs = 1;

    void validate() const;
};

GridConfig read_grid_config(const std::filesystem::path& path);
void write_grid_config(const GridConfig& cfg, const std::filesystem::path& path);

struct CellId {
    models::ModelKind model = models::ModelKind::ann;
    double duration_s = 5.0;
    dataset::Sampling sampling = dataset::Sampling::oversample;

    /// e.g. "RNN_5s_oversample"
    std::string str() const;
};

/// Cells in canonical order: durations, then samplings, then models.
std::vector<CellId> enumerate_cells(const GridConfig& cfg);

/// Total experiments: grid cells plus one CV run per model kind.
std::size_t experiment_count(const GridConfig& cfg);

std::string format_duration(double seconds);

struct ExperimentResult {
    CellId cell;
    double final_test_accuracy = 0.0;
    double best_val_loss = 0.0;
    std::size_t epochs_run = 0;
    double wall_seconds = 0.0;
    std::uint64_t seed = 0;
    std::vector<nn::EpochMetrics> epoch_curves;
    std::size_t train_count = 0;
    std::size_t final_test_count = 0;
    std::string stop_reason;
};

struct CellOutput {
    ExperimentResult result;
    models::Classifier classifier;
    dataset::Split split;
};

/// Trains and evaluates one cell on a prepared manifest. Everything random
/// is derived from `seed`.
CellOutput run_cell(const dataset::Manifest& manifest, const CellId& cell, const RunConfig& run,
                    std::uint64_t seed);

struct CvResult {
    CellId cell;
    std::size_t k = 0;
    std::vector<double> fold_accuracies;
    double mean = 0.0;
    double stddev = 0.0;
    std::optional<double> holdout_accuracy;
    std::optional<double> delta_vs_holdout;
    double wall_seconds = 0.0;
    std::uint64_t seed = 0;
};

/// k-fold CV on the non-held-out data of the cell's split; every fold model
/// is scored on the same held-out partition the grid cell uses.
CvResult run_cv(const dataset::Manifest& manifest, const CellId& cell, std::size_t k,
                const RunConfig& run, std::uint64_t seed,
                std::optional<double> holdout_accuracy = std::nullopt);

struct GridOutcome {
    std::vector<ExperimentResult> results;
    std::vector<CvResult> cv_results;
    std::map<std::string, std::string> failures;
    std::map<double, std::vector<std::size_t>> class_counts;
};

/// Runs (or resumes) the whole grid under `out_dir`: manifests/, curves/,
/// results.csv, cv.csv and the report tables.
GridOutcome run_grid(const GridConfig& cfg, const std::filesystem::path& out_dir);

/// Writes `cell_id,model,duration_s,sampling,final_test_acc,best_val_loss,epochs,wall_seconds,seed`.
void write_results_csv(const std::vector<ExperimentResult>& results,
                       const std::filesystem::path& path);
std::vector<ExperimentResult> read_results_csv(const std::filesystem::path& path);

void write_cv_csv(const std::vector<CvResult>& results, const std::filesystem::path& path);
std::vector<CvResult> read_cv_csv(const std::filesystem::path& path);

struct BestCell {
    models::ModelKind model;
    double accuracy = 0.0;
    double duration_s = 0.0;
    dataset::Sampling sampling = dataset::Sampling::none;
    std::string cell_id;
    double wall_seconds = 0.0;
};

/// Highest final-test accuracy per model; ties go to the earlier result.
std::vector<BestCell> best_cells(const std::vector<ExperimentResult>& results);

struct SamplingEffect {
    models::ModelKind model;
    double duration_s = 0.0;
    double oversample_acc = 0.0;
    double undersample_acc = 0.0;
    double delta = 0.0;
};

/// Oversample minus undersample accuracy for each (model, duration) having both.
std::vector<SamplingEffect> sampling_effects(const std::vector<ExperimentResult>& results);

/// Writes every report table under `out_dir` (see README for the list).
void emit_report(const std::vector<ExperimentResult>& results, const std::vector<CvResult>& cv,
                 const std::filesystem::path& out_dir,
                 const std::map<double, std::vector<std::size_t>>& class_counts = {});

} // namespace nli::experiments
