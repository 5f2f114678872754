#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "celladapt/dataset.hpp"
#include "celladapt/detector.hpp" // TrainConfig, TrainRecord
#include "celladapt/heatmap.hpp"
#include "celladapt/nn/checkpoint.hpp"
#include "celladapt/nn/ops.hpp"

namespace celladapt {

/// (image, heatmap) pair fed to the discriminator. Label 0 means the
/// heatmap looks like a correct annotation of the image, 1 means incorrect.
/// Inference pairs carry label -1.
struct PairSample {
    std::string id;
    Image image;
    PositionHeatmap heatmap;
    int label = -1;
};

/// Negative-pair synthesis settings. Shift displacements span
/// [shift_min_sigmas, shift_max_sigmas] * sigma; per-mode counts are drawn
/// in 1..max_count (capped by the number of points where applicable).
struct PairCorruptionConfig {
    float sigma = 6.0f;
    float amplitude = 255.0f;
    int max_count = 3;
    float shift_min_sigmas = 2.0f;
    float shift_max_sigmas = 4.0f;
};

/// One positive pair per labeled sample plus neg_per_pos corrupted pairs,
/// corruption mode uniform over {add, remove, shift}. A sample with no
/// points resamples the mode until it draws one that applies (add).
std::vector<PairSample> make_training_pairs(std::span<const PatchSample> labeled,
                                            int neg_per_pos,
                                            const PairCorruptionConfig& cfg,
                                            std::uint64_t seed);

/// Residual convolutional classifier over 2-channel (image, heatmap) input
/// with a 2-class head. Every conv is followed by per-sample instance
/// normalization (batch statistics would couple samples and break
/// per-candidate determinism). Dropout sits after every residual stage and
/// before the head; it is active during training and inside mc_uncertainty
/// only.
class DiscriminatorModel {
public:
    struct Arch {
        int width = 8;        // stem channels; doubles at each downsample
        float dropout = 0.2f;
    };

    struct Acts {
        nn::Tensor in;
        nn::Tensor stem_n, stem; // normalized conv output, then relu
        std::vector<float> stem_istd;
        nn::Tensor b1n[4], b1[4];
        std::vector<float> b1_istd[4];
        nn::Tensor b2n[4], block2[4], stage_out[4];
        std::vector<float> b2_istd[4];
        nn::Tensor down_n[4], down[4]; // down[i] feeds stage i; slot 0 unused
        std::vector<float> down_istd[4];
        std::vector<float> drop_mask[4];
        std::vector<float> gap, gap_dropped, head_mask, logits;
        std::vector<float> col;
    };

    struct ForwardOpts {
        bool dropout_active = false;
        Rng* rng = nullptr; // required when dropout_active and rate > 0
    };

    DiscriminatorModel(const Arch& arch, std::uint64_t init_seed);

    /// Fills acts and returns the 2-class logits in acts.logits.
    void forward(const nn::Tensor& input, Acts& acts, const ForwardOpts& opts) const;
    void backward(const std::vector<float>& dlogits, Acts& acts, std::vector<float>& grad) const;

    /// Penultimate representation (global-average-pooled features), no dropout.
    std::vector<float> features(const nn::Tensor& input) const;

    const Arch& arch() const { return arch_; }
    int feature_dim() const { return arch_.width << 3; }
    nn::ParamStore& params() { return ps_; }
    const nn::ParamStore& params() const { return ps_; }
    nn::AdamOpt& optimizer() { return adam_; }

    nn::Checkpoint to_checkpoint(const std::string& config_hash) const;
    static DiscriminatorModel from_checkpoint(const nn::Checkpoint& ck);

private:
    Arch arch_;
    nn::ParamStore ps_;
    nn::AdamOpt adam_;
    nn::Conv stem_;
    nn::Conv c1_[4], c2_[4], down_[3];
    nn::Linear head_;

    void build_layers();
};

/// Stack image and heatmap as two channels on the internal [0,1] scale.
nn::Tensor make_pair_tensor(const Image& image, const Image& heatmap);

/// Cross-entropy training with dropout active. Requires both classes.
TrainRecord train_discriminator(DiscriminatorModel& model, std::span<const PairSample> pairs,
                                const TrainConfig& cfg);

/// Fraction of pairs whose argmax class matches the label (dropout off).
double pair_accuracy(const DiscriminatorModel& model, std::span<const PairSample> pairs);

/// MC-dropout predictive score: mean class-1 (incorrect) probability over
/// T stochastic forward passes, with the per-pass values and their
/// population variance.
struct UncertaintyScore {
    double score = 0.0;
    std::vector<double> per_pass;
    double variance = 0.0;
};

UncertaintyScore mc_uncertainty(const DiscriminatorModel& model, const PairSample& pair, int T,
                                std::uint64_t seed);

enum class UncertaintyMetric { MeanP1, Variance };

UncertaintyMetric uncertainty_metric_from_string(const std::string& name);
double metric_value(const UncertaintyScore& u, UncertaintyMetric metric);

struct ScoredCandidate {
    std::string id;
    UncertaintyScore uncertainty;
};

/// Scores every candidate with an isolated seed stream derived from
/// (seed, id) and returns them sorted ascending by the selection metric,
/// ties broken by id. Safe to parallelize; results are order-exact.
std::vector<ScoredCandidate> score_candidates(const DiscriminatorModel& model,
                                              std::span<const PairSample> candidates, int T,
                                              std::uint64_t seed,
                                              UncertaintyMetric metric = UncertaintyMetric::MeanP1);

/// Generator form used when materializing all candidate pairs at once would
/// be wasteful. make_pair(i) is called once per candidate.
std::vector<ScoredCandidate> score_candidates_generated(
    const DiscriminatorModel& model, std::size_t count,
    const std::function<PairSample(std::size_t)>& make_pair, int T, std::uint64_t seed,
    UncertaintyMetric metric = UncertaintyMetric::MeanP1);

} // namespace celladapt
