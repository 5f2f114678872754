#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "celladapt/dataset.hpp"
#include "celladapt/detector.hpp"
#include "celladapt/discriminator.hpp"
#include "celladapt/evaluate.hpp"

namespace celladapt {

/// Everything the iterative domain-extension loop needs. Paper-default
/// hyperparameters: th_d=100, th_u=10, T=10, 4 iterations.
struct AdaptationConfig {
    float th_d = 100.0f;
    int th_u = 10;
    double th_u_fraction = 0.0; // when > 0, per-iteration count = round(fraction * remaining)
    int T = 10;
    int max_iterations = 4;
    float sigma = 6.0f;
    float amplitude = 255.0f;
    int nms_radius = 6;
    float d_match = 10.0f;
    int patch_size = 128;

    DetectorModel::Arch detector_arch;
    DiscriminatorModel::Arch discriminator_arch;
    TrainConfig detector_train; // epochs = initial training (iteration 0)
    int detector_finetune_epochs = 20;
    bool detector_from_scratch = false; // retrain fresh each iteration
    TrainConfig discriminator_train;
    int discriminator_finetune_epochs = 15;
    int neg_per_pos = 1;
    bool corrupt_pseudo_negatives = true; // negatives also from pseudo samples
    int candidate_subset = 0;             // 0 = score every remaining patch
    std::string uncertainty_metric = "mean_p1";
    std::uint64_t seed = 1;
    std::string config_hash; // stamped into checkpoints
};

void validate(const AdaptationConfig& cfg);

/// A pseudo label frozen at selection time; never revised afterwards.
struct PseudoLabel {
    std::string id;
    std::vector<Point> points;
    int iteration = 0;
};

struct SelectedRecord {
    std::string id;
    double score = 0.0;
    double variance = 0.0;
};

struct IterationRecord {
    int iteration = 0;
    std::vector<SelectedRecord> selected;
    IterationMetrics metrics;
};

struct AdaptationState {
    int iteration = 0; // next iteration to run
    DetectorModel detector;
    DiscriminatorModel discriminator;
    std::vector<PseudoLabel> pseudo;
    std::vector<std::string> remaining_ids;
    std::vector<IterationRecord> history;

    // Report material; not part of the resumable state.
    std::vector<FeatureRow> features;
    std::vector<TriptychSample> triptychs;
};

/// A target patch whose regenerated pseudo-heatmap is up for selection.
struct PseudoCandidate {
    std::string id;
    const PatchSample* sample = nullptr;
    std::vector<Point> points; // peaks detected in the predicted heatmap
    UncertaintyScore uncertainty;
};

/// Takes the min(th_u, size) lowest-uncertainty candidates from an
/// ascending-sorted list and freezes them as pseudo-labeled samples.
std::vector<PatchSample> select_pseudo(std::span<const PseudoCandidate> scored_sorted, int th_u);

AdaptationState make_initial_state(const DataSet& ds, const AdaptationConfig& cfg);

/// One pass of the five-step loop; writes iter_<k>/ artifacts and rewrites
/// report.csv under run_dir. Appends to state.history and advances
/// state.iteration.
void run_iteration(AdaptationState& state, const DataSet& ds, const ShadowAnnotations& shadow,
                   const AdaptationConfig& cfg, const std::string& run_dir);

/// Full adaptation: max_iterations iterations with per-iteration evaluation
/// on both test splits. Deterministic per seed set.
RunReport run_adaptation(const DataSet& ds, const ShadowAnnotations& shadow,
                         const AdaptationConfig& cfg, const std::string& run_dir);

/// Rebuild the state after the last complete iteration recorded in run_dir.
AdaptationState resume(const std::string& run_dir, const DataSet& ds,
                       const AdaptationConfig& cfg);

/// Finish a (possibly resumed) run; equivalent to an uninterrupted
/// run_adaptation given the same seeds.
RunReport continue_adaptation(AdaptationState& state, const DataSet& ds,
                              const ShadowAnnotations& shadow, const AdaptationConfig& cfg,
                              const std::string& run_dir);

/// Supervised reference: trains the detector on labeled-source only with the
/// same seed derivation as adaptation iteration 0 and evaluates both splits.
struct BaselineResult {
    IterationMetrics metrics;
    TrainRecord record;
    DetectorModel detector;
};

BaselineResult train_baseline(const DataSet& ds, const ShadowAnnotations& shadow,
                              const AdaptationConfig& cfg);

} // namespace celladapt
