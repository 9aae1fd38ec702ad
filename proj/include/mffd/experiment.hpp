#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mffd/config.hpp"
#include "mffd/perturbation_harness.hpp"

namespace mffd {

/// A trained detector plus the decision threshold calibrated on the
/// validation split.
struct FittedRun {
    RunConfig config;
    Detector detector;
    TrainResult result;
    double threshold = 0.0;
    double val_balanced_accuracy = 0.0;
};

/// The FEMB table named by the config when it asks for file embeddings.
std::optional<EmbeddingTable> load_embeddings(const RunConfig& cfg);

/// Trains on the train split and calibrates on the val split.
FittedRun fit_run(const RunConfig& cfg, const DatasetManifest& manifest, const ProgressFn& progress = {});

/// Writes weights.fwts, config.txt, history.csv and calibration.csv.
void save_run(const std::filesystem::path& dir, const FittedRun& run);
/// Rebuilds the detector from config.txt and weights.fwts; the history is
/// not restored.
FittedRun load_run(const std::filesystem::path& dir);

/// Keeps the samples whose id starts with one of `prefixes` (all when empty).
LabeledImages filter_ids(const LabeledImages& data, const std::vector<std::string>& prefixes);

/// Test-split report for a fitted run, optionally restricted by id prefix.
EvalReport evaluate_run(const FittedRun& run, const LabeledImages& test);

struct AblationRow {
    std::string name;  // "full" or "-branch[+branch]"
    EvalReport report;
};

/// Trains the full model and one model per drop entry (`npr`, `grad`,
/// `semantic`, or several joined by '+') and reports each on the test split.
std::vector<AblationRow> ablate(const RunConfig& cfg, const DatasetManifest& manifest,
                                const std::vector<std::string>& drops, const ProgressFn& progress = {});

/// `config,acc,ap,threshold`.
std::string ablation_csv(const std::vector<AblationRow>& rows);

/// The branch switches of `cfg` with `drop` turned off; InvalidConfig for
/// unknown branch names.
RunConfig drop_branches(RunConfig cfg, const std::string& drop);

}  // namespace mffd
