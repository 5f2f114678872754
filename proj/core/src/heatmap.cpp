#include "celladapt/heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "celladapt/rng.hpp"

namespace celladapt {

namespace {

void check_sigma_amplitude(float sigma, float amplitude) {
    if (!(sigma > 0.0f))
        throw std::invalid_argument("encode_points: sigma must be positive, got " +
                                    std::to_string(sigma));
    if (!(amplitude > 0.0f) || amplitude > 255.0f)
        throw std::invalid_argument("encode_points: amplitude must be in (0, 255], got " +
                                    std::to_string(amplitude));
}

} // namespace

PositionHeatmap encode_points(std::span<const Point> points, int height, int width,
                              float sigma, float amplitude) {
    check_sigma_amplitude(sigma, amplitude);
    if (height <= 0 || width <= 0)
        throw std::invalid_argument("encode_points: non-positive grid shape");
    for (std::size_t i = 0; i < points.size(); ++i) {
        const Point& p = points[i];
        if (!(p.x >= 0.0f && p.x < static_cast<float>(width) &&
              p.y >= 0.0f && p.y < static_cast<float>(height)))
            throw std::invalid_argument("encode_points: point " + std::to_string(i) +
                                        " (" + std::to_string(p.x) + ", " + std::to_string(p.y) +
                                        ") outside " + std::to_string(width) + "x" +
                                        std::to_string(height) + " grid");
    }

    PositionHeatmap hm;
    hm.sigma = sigma;
    hm.amplitude = amplitude;
    hm.grid = Image(height, width, 0.0f);

    const float inv_two_sigma2 = 1.0f / (2.0f * sigma * sigma);
    for (const Point& c : points) {
        float* row = hm.grid.data.data();
        for (int y = 0; y < height; ++y) {
            const float dy = static_cast<float>(y) - c.y;
            const float dy2 = dy * dy;
            for (int x = 0; x < width; ++x, ++row) {
                const float dx = static_cast<float>(x) - c.x;
                const float v = amplitude * std::exp(-(dx * dx + dy2) * inv_two_sigma2);
                if (v > *row) *row = v;
            }
        }
    }
    for (float& v : hm.grid.data) v = std::clamp(v, 0.0f, 255.0f);
    return hm;
}

std::vector<Peak> detect_peaks_valued(const Image& grid, float th_d, int nms_radius) {
    if (th_d < 0.0f || th_d > 255.0f)
        throw std::invalid_argument("detect_peaks: th_d must be in [0, 255]");
    if (nms_radius < 1)
        throw std::invalid_argument("detect_peaks: nms_radius must be >= 1");

    std::vector<Peak> peaks;
    const int h = grid.height, w = grid.width;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const float v = grid.at(y, x);
            if (v < th_d) continue;
            const int y0 = std::max(0, y - nms_radius), y1 = std::min(h - 1, y + nms_radius);
            const int x0 = std::max(0, x - nms_radius), x1 = std::min(w - 1, x + nms_radius);
            bool is_peak = true;
            for (int qy = y0; qy <= y1 && is_peak; ++qy) {
                const float* row = grid.data.data() + static_cast<std::size_t>(qy) * w + x0;
                for (int qx = x0; qx <= x1; ++qx, ++row) {
                    if (qy == y && qx == x) continue;
                    // Strictly dominated, or tied with a raster-smaller pixel.
                    if (*row > v || (*row == v && (qy < y || (qy == y && qx < x)))) {
                        is_peak = false;
                        break;
                    }
                }
            }
            if (is_peak) peaks.push_back({x, y, v});
        }
    }
    return peaks; // scan order is already (y, x)
}

std::vector<Point> detect_peaks(const PositionHeatmap& heatmap, float th_d, int nms_radius) {
    std::vector<Point> pts;
    for (const Peak& p : detect_peaks_valued(heatmap.grid, th_d, nms_radius))
        pts.push_back({static_cast<float>(p.x), static_cast<float>(p.y)});
    return pts;
}

PositionHeatmap regenerate(const PositionHeatmap& predicted, float th_d, int nms_radius,
                           float sigma, float amplitude) {
    const std::vector<Point> peaks = detect_peaks(predicted, th_d, nms_radius);
    return encode_points(peaks, predicted.grid.height, predicted.grid.width, sigma, amplitude);
}

namespace {

void validate_corruption(const CorruptionSpec& spec, std::size_t n_gt, float sigma) {
    if (spec.count < 1)
        throw std::invalid_argument("corrupt: count must be >= 1");
    if (spec.mode == CorruptionMode::Remove && static_cast<std::size_t>(spec.count) > n_gt)
        throw std::invalid_argument("corrupt: remove count " + std::to_string(spec.count) +
                                    " exceeds " + std::to_string(n_gt) + " ground-truth points");
    if (spec.mode == CorruptionMode::Shift) {
        if (static_cast<std::size_t>(spec.count) > n_gt)
            throw std::invalid_argument("corrupt: shift count exceeds ground-truth points");
        if (spec.shift_min < 2.0f * sigma)
            throw std::invalid_argument("corrupt: shift_min must be >= 2*sigma (" +
                                        std::to_string(2.0f * sigma) + ")");
        if (spec.shift_max < spec.shift_min)
            throw std::invalid_argument("corrupt: shift_max < shift_min");
    }
}

} // namespace

Corruption corrupt(std::span<const Point> gt_points, int height, int width,
                   const CorruptionSpec& spec, float sigma, float amplitude,
                   std::uint64_t seed) {
    validate_corruption(spec, gt_points.size(), sigma);
    Rng rng(seed);
    std::vector<Point> pts(gt_points.begin(), gt_points.end());

    switch (spec.mode) {
    case CorruptionMode::Add: {
        const float min_sep = 2.0f * sigma;
        for (int k = 0; k < spec.count; ++k) {
            bool placed = false;
            for (int attempt = 0; attempt < 10000 && !placed; ++attempt) {
                Point cand{static_cast<float>(rng.uniform(0.0, width - 1.0)),
                           static_cast<float>(rng.uniform(0.0, height - 1.0))};
                bool clear = true;
                for (const Point& p : pts) {
                    if (distance(cand, p) < min_sep) {
                        clear = false;
                        break;
                    }
                }
                if (clear) {
                    pts.push_back(cand);
                    placed = true;
                }
            }
            if (!placed)
                throw std::runtime_error(
                    "corrupt: could not place an added Gaussian >= 2*sigma (" +
                    std::to_string(min_sep) + " px) away from all existing points after "
                    "10000 attempts; grid too crowded");
        }
        break;
    }
    case CorruptionMode::Remove: {
        std::vector<std::size_t> idx(pts.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        rng.shuffle(idx);
        idx.resize(static_cast<std::size_t>(spec.count));
        std::sort(idx.rbegin(), idx.rend());
        for (std::size_t i : idx) pts.erase(pts.begin() + static_cast<std::ptrdiff_t>(i));
        break;
    }
    case CorruptionMode::Shift: {
        std::vector<std::size_t> idx(pts.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        rng.shuffle(idx);
        for (int k = 0; k < spec.count; ++k) {
            Point& p = pts[idx[static_cast<std::size_t>(k)]];
            const Point original = p;
            for (int attempt = 0; attempt < 100; ++attempt) {
                const double mag = rng.uniform(spec.shift_min, spec.shift_max);
                const double ang = rng.uniform(0.0, 2.0 * std::numbers::pi);
                Point moved{
                    std::clamp(original.x + static_cast<float>(mag * std::cos(ang)),
                               0.0f, static_cast<float>(width - 1)),
                    std::clamp(original.y + static_cast<float>(mag * std::sin(ang)),
                               0.0f, static_cast<float>(height - 1))};
                // Clipping near borders can cancel the displacement; insist the
                // shifted point lands on a different pixel.
                if (rounded(moved) != rounded(original) && distance(moved, original) >= 1.0f) {
                    p = moved;
                    break;
                }
            }
        }
        break;
    }
    }

    Corruption out;
    out.points = std::move(pts);
    out.heatmap = encode_points(out.points, height, width, sigma, amplitude);
    return out;
}

} // namespace celladapt
