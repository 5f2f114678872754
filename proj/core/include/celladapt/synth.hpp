#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "celladapt/dataset.hpp"

namespace celladapt {

/// Appearance of one synthetic culture condition. Eccentricity is the
/// major/minor axis ratio; radius is the minor-axis radius in pixels.
struct DomainParams {
    float ecc_min = 1.0f;
    float ecc_max = 1.3f;
    float radius_min = 4.0f;
    float radius_max = 7.0f;
    float density = 6.0f; // expected cells per 128x128 patch
    float noise_std = 5.0f;
    float background_level = 120.0f;
    bool texture = false; // low-frequency seeded background field
};

void validate(const DomainParams& p);

/// Round cells vs clearly elongated cells: the synthetic stand-in for a
/// culture-condition shift.
DomainParams source_domain_defaults();
DomainParams target_domain_defaults();

struct EllipseCell {
    Point center;
    float minor_radius = 4.0f;
    float axis_ratio = 1.0f;
    float angle = 0.0f;    // radians
    float contrast = 40.0f; // signed, relative to background
};

struct RenderedPatch {
    Image image;
    std::vector<Point> points;
    std::vector<EllipseCell> cells;
};

/// Renders Poisson(density * area / 128^2) anti-aliased ellipses with
/// additive Gaussian noise, quantized to integer intensities in [0, 255].
RenderedPatch render_patch(const DomainParams& params, int height, int width,
                           std::uint64_t seed);

/// 128x128 patch with ground-truth centers.
PatchSample generate_patch(const DomainParams& params, std::uint64_t seed);

struct DatasetCounts {
    int labeled_source = 24;
    int unlabeled_target = 1000;
    int test_source = 20;
    int test_target = 20;
};

struct SynthConfig {
    DomainParams source = source_domain_defaults();
    DomainParams target = target_domain_defaults();
    DatasetCounts counts;
    int patch_size = 128;
    int test_image_size = 256; // test entries are entire images
};

struct GeneratedDataSet {
    DataSet data;
    ShadowAnnotations shadow; // GT of unlabeled-target and test samples
};

/// Two-domain dataset: labeled-source patches carry points; unlabeled-target
/// and test ground truth goes only into the shadow annotations.
GeneratedDataSet generate_dataset(const SynthConfig& cfg, std::uint64_t seed);

} // namespace celladapt
