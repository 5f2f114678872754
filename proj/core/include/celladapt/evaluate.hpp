#pragma once

#include <span>
#include <string>
#include <vector>

#include "celladapt/dataset.hpp"
#include "celladapt/detector.hpp"
#include "celladapt/matching.hpp"

namespace celladapt {

/// Micro-averaged detection metrics over one test split: tp/fp/fn are
/// summed across images, then precision/recall/F recomputed from the sums.
struct SplitEvaluation {
    MatchReport aggregate;
    int images = 0;
};

/// Runs tiled full-image prediction per test image and matches against the
/// shadow ground truth. Ids absent from a non-empty shadow map count as
/// empty scenes; an entirely empty shadow map is an error.
SplitEvaluation evaluate_model(const DetectorModel& model,
                               std::span<const PatchSample> test_split,
                               const ShadowAnnotations& shadow, float d_match, float th_d,
                               int nms_radius, int patch_size = 128);

struct IterationMetrics {
    int iteration = 0;
    double f_source = 0.0;
    double f_target = 0.0;
    double precision_target = 0.0;
    double recall_target = 0.0;
    int n_selected = 0;
};

/// One point of the feature-distribution scatter. selected_iteration is the
/// iteration a pseudo label was accepted, -1 for unselected candidates and
/// -2 for labeled source samples.
struct FeatureRow {
    std::string id;
    int selected_iteration = -1;
    std::vector<float> feature;
};

struct TriptychSample {
    int iteration = 0;
    std::string id;
    Image image;
    Image predicted;
    Image pseudo;
};

struct RunReport {
    std::vector<IterationMetrics> rows;
    std::vector<FeatureRow> features;
    std::vector<TriptychSample> triptychs;
    float d_match = 10.0f;
    std::string run_dir;
};

void write_report_csv(std::span<const IterationMetrics> rows, const std::string& path);
std::vector<IterationMetrics> read_report_csv(const std::string& path);

void write_features_csv(std::span<const FeatureRow> rows, const std::string& path);
std::vector<FeatureRow> read_features_csv(const std::string& path);

/// Rebuild a report from the csv artifacts of a finished run directory.
RunReport load_run_report(const std::string& run_dir);

/// Writes report.csv, the F-vs-iteration curve, heatmap triptychs, and the
/// 2-D feature scatter (deterministic PCA projection) into out_dir.
void emit_report(const RunReport& report, const std::string& out_dir);

} // namespace celladapt
