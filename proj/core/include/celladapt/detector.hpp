#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "celladapt/dataset.hpp"
#include "celladapt/heatmap.hpp"
#include "celladapt/nn/checkpoint.hpp"
#include "celladapt/nn/ops.hpp"

namespace celladapt {

struct TrainConfig {
    float learning_rate = 1e-3f;
    int epochs = 40;
    int batch_size = 8;
    std::uint64_t seed = 0;
    bool augment = false; // flips and 90-degree rotations
};

struct TrainRecord {
    std::vector<float> epoch_loss;
};

/// Image paired with its encoded target heatmap, both on the 0-255 scale.
struct DetectorExample {
    std::string id;
    Image image;
    Image target;
};

/// Encode each sample's points into a target heatmap. A sample without
/// points cannot be a training sample.
std::vector<DetectorExample> make_detector_examples(std::span<const PatchSample> samples,
                                                    float sigma, float amplitude);

/// Encoder-decoder heatmap regressor with skip connections: four down/up
/// stages, single-channel input and output, output size = input size.
/// Targets and raw outputs live on the internal [0,1] scale.
class DetectorModel {
public:
    struct Arch {
        int width = 8; // channels at full resolution; doubles per stage
    };

    struct Acts {
        nn::Tensor in;
        nn::Tensor enc_a[5], enc_b[5]; // levels 0..3 + bottleneck
        nn::Tensor pooled[4];
        std::vector<int> argmax[4];
        nn::Tensor up[4], upc[4], cat[4], dec_a[4], dec_b[4];
        nn::Tensor out;
        nn::Tensor g0, g1, g2; // backward scratch
        std::vector<float> col;
    };

    DetectorModel(const Arch& arch, std::uint64_t init_seed);

    void forward(const nn::Tensor& input, Acts& acts) const;
    void backward(const nn::Tensor& dout, Acts& acts, std::vector<float>& grad) const;

    const Arch& arch() const { return arch_; }
    nn::ParamStore& params() { return ps_; }
    const nn::ParamStore& params() const { return ps_; }
    nn::AdamOpt& optimizer() { return adam_; }

    nn::Checkpoint to_checkpoint(const std::string& config_hash) const;
    static DetectorModel from_checkpoint(const nn::Checkpoint& ck);

private:
    Arch arch_;
    nn::ParamStore ps_;
    nn::AdamOpt adam_;
    nn::Conv enc_a_[5], enc_b_[5];
    nn::Conv up_[4], dec_a_[4], dec_b_[4];
    nn::Conv head_;

    void build_layers();
};

/// Mean-squared-error training on the internal scale. Deterministic per
/// seed; results do not depend on the number of worker threads.
TrainRecord train_detector(DetectorModel& model, std::span<const DetectorExample> examples,
                           const TrainConfig& cfg);

/// Single forward pass; output rescaled to [0,255] and clipped.
PositionHeatmap predict_heatmap(const DetectorModel& model, const Image& image, float sigma,
                                float amplitude);

/// Tile a large image (stride = patch size, edge-aligned remainder), predict
/// per tile, and merge duplicate detections across seams keeping the
/// higher-valued peak.
std::vector<Point> predict_full_image(const DetectorModel& model, const Image& image,
                                      float th_d, int nms_radius, int patch_size = 128);

} // namespace celladapt
