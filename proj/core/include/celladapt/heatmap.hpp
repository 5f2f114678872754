#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "celladapt/geometry.hpp"
#include "celladapt/image.hpp"

namespace celladapt {

/// Cell-position heatmap: each annotated point is a Gaussian peak.
/// Values stay in [0, 255]; sigma and amplitude record the encoding.
struct PositionHeatmap {
    Image grid;
    float sigma = 6.0f;
    float amplitude = 255.0f;
};

enum class CorruptionMode { Add, Remove, Shift };

/// How to damage a ground truth into a plausible-but-wrong heatmap.
/// Shift displacements are at least 2*sigma so corruptions are visually off.
struct CorruptionSpec {
    CorruptionMode mode = CorruptionMode::Shift;
    int count = 1;
    float shift_min = 12.0f;
    float shift_max = 24.0f;
};

struct Corruption {
    PositionHeatmap heatmap;
    std::vector<Point> points;
};

/// A detected peak with the heatmap value it carries.
struct Peak {
    int x = 0;
    int y = 0;
    float value = 0.0f;
};

/// Gaussian-encode a point set. Value at pixel p is
/// max over points c of amplitude * exp(-|p - c|^2 / (2 sigma^2)),
/// evaluated at pixel centers; overlaps combine by per-pixel max.
PositionHeatmap encode_points(std::span<const Point> points, int height, int width,
                              float sigma, float amplitude);

/// Every strict local maximum within nms_radius with value >= th_d.
/// Plateau ties go to the raster-smallest pixel; result sorted by (y, x).
std::vector<Point> detect_peaks(const PositionHeatmap& heatmap, float th_d, int nms_radius);
std::vector<Peak> detect_peaks_valued(const Image& grid, float th_d, int nms_radius);

/// Re-encode the peaks of a (possibly distorted) prediction as clean
/// Gaussians. Idempotent on well-separated peaks.
PositionHeatmap regenerate(const PositionHeatmap& predicted, float th_d, int nms_radius,
                           float sigma, float amplitude);

/// Build a deliberately wrong heatmap from a ground-truth point set by
/// adding, removing, or shifting Gaussians. Deterministic per seed; the
/// corrupted point set always differs from the input set.
Corruption corrupt(std::span<const Point> gt_points, int height, int width,
                   const CorruptionSpec& spec, float sigma, float amplitude,
                   std::uint64_t seed);

} // namespace celladapt
