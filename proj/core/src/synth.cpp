#include "celladapt/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "celladapt/rng.hpp"

namespace celladapt {

void validate(const DomainParams& p) {
    if (p.ecc_min < 1.0f || p.ecc_max < p.ecc_min)
        throw std::invalid_argument("DomainParams: eccentricity range must satisfy 1 <= min <= max");
    if (p.radius_min <= 0.0f || p.radius_max < p.radius_min)
        throw std::invalid_argument("DomainParams: radius range must be positive and ordered");
    if (!(p.density > 0.0f))
        throw std::invalid_argument("DomainParams: density must be > 0");
    if (p.noise_std < 0.0f)
        throw std::invalid_argument("DomainParams: noise_std must be >= 0");
    if (p.background_level < 0.0f || p.background_level > 255.0f)
        throw std::invalid_argument("DomainParams: background_level must be in [0, 255]");
}

DomainParams source_domain_defaults() {
    DomainParams p;
    p.ecc_min = 1.0f;
    p.ecc_max = 1.3f;
    return p;
}

DomainParams target_domain_defaults() {
    DomainParams p;
    p.ecc_min = 2.5f;
    p.ecc_max = 4.0f;
    return p;
}

namespace {

// 4x4 supersampled coverage of a rotated ellipse over one pixel.
float ellipse_coverage(const EllipseCell& e, int px, int py) {
    const float a = e.axis_ratio * e.minor_radius; // major
    const float b = e.minor_radius;                // minor
    const float c = std::cos(e.angle), s = std::sin(e.angle);
    int inside = 0;
    for (int sy = 0; sy < 4; ++sy) {
        for (int sx = 0; sx < 4; ++sx) {
            const float x = static_cast<float>(px) - 0.375f + 0.25f * static_cast<float>(sx);
            const float y = static_cast<float>(py) - 0.375f + 0.25f * static_cast<float>(sy);
            const float dx = x - e.center.x;
            const float dy = y - e.center.y;
            const float u = (c * dx + s * dy) / a;
            const float v = (-s * dx + c * dy) / b;
            if (u * u + v * v <= 1.0f) ++inside;
        }
    }
    return static_cast<float>(inside) / 16.0f;
}

// Value-noise background: bilinear interpolation of a coarse random grid.
void add_texture(Image& img, Rng& rng, float amplitude) {
    constexpr int kGrid = 9;
    float knots[kGrid][kGrid];
    for (int gy = 0; gy < kGrid; ++gy)
        for (int gx = 0; gx < kGrid; ++gx)
            knots[gy][gx] = static_cast<float>(rng.uniform(-amplitude, amplitude));
    const float sy = static_cast<float>(kGrid - 1) / static_cast<float>(img.height);
    const float sx = static_cast<float>(kGrid - 1) / static_cast<float>(img.width);
    for (int y = 0; y < img.height; ++y) {
        const float fy = static_cast<float>(y) * sy;
        const int gy = std::min(static_cast<int>(fy), kGrid - 2);
        const float ty = fy - static_cast<float>(gy);
        for (int x = 0; x < img.width; ++x) {
            const float fx = static_cast<float>(x) * sx;
            const int gx = std::min(static_cast<int>(fx), kGrid - 2);
            const float tx = fx - static_cast<float>(gx);
            const float top = knots[gy][gx] * (1 - tx) + knots[gy][gx + 1] * tx;
            const float bot = knots[gy + 1][gx] * (1 - tx) + knots[gy + 1][gx + 1] * tx;
            img.at(y, x) += top * (1 - ty) + bot * ty;
        }
    }
}

} // namespace

RenderedPatch render_patch(const DomainParams& params, int height, int width,
                           std::uint64_t seed) {
    validate(params);
    Rng rng(seed);

    RenderedPatch out;
    out.image = Image(height, width, params.background_level);

    const double area_scale = static_cast<double>(height) * width / (128.0 * 128.0);
    const int n_cells = rng.poisson(static_cast<double>(params.density) * area_scale);

    for (int i = 0; i < n_cells; ++i) {
        EllipseCell cell;
        cell.center = {static_cast<float>(rng.uniform(0.0, width - 1.0)),
                       static_cast<float>(rng.uniform(0.0, height - 1.0))};
        cell.minor_radius = static_cast<float>(rng.uniform(params.radius_min, params.radius_max));
        cell.axis_ratio = static_cast<float>(rng.uniform(params.ecc_min, params.ecc_max));
        cell.angle = static_cast<float>(rng.uniform(0.0, std::numbers::pi));
        const float magnitude = static_cast<float>(rng.uniform(20.0, 80.0));
        cell.contrast = rng.uniform() < 0.5 ? magnitude : -magnitude;
        out.cells.push_back(cell);
        out.points.push_back(cell.center);
    }

    for (const EllipseCell& cell : out.cells) {
        const float reach = cell.axis_ratio * cell.minor_radius + 1.5f;
        const int x0 = std::max(0, static_cast<int>(std::floor(cell.center.x - reach)));
        const int x1 = std::min(width - 1, static_cast<int>(std::ceil(cell.center.x + reach)));
        const int y0 = std::max(0, static_cast<int>(std::floor(cell.center.y - reach)));
        const int y1 = std::min(height - 1, static_cast<int>(std::ceil(cell.center.y + reach)));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                const float cov = ellipse_coverage(cell, x, y);
                if (cov > 0.0f) out.image.at(y, x) += cell.contrast * cov;
            }
    }

    if (params.texture) add_texture(out.image, rng, 12.0f);

    if (params.noise_std > 0.0f)
        for (float& v : out.image.data)
            v += static_cast<float>(rng.normal(0.0, params.noise_std));

    // Quantize so on-disk round trips are exact.
    for (float& v : out.image.data)
        v = std::clamp(std::round(v), 0.0f, 255.0f);
    return out;
}

PatchSample generate_patch(const DomainParams& params, std::uint64_t seed) {
    RenderedPatch r = render_patch(params, 128, 128, seed);
    PatchSample s;
    s.image = std::move(r.image);
    s.points = std::move(r.points);
    return s;
}

GeneratedDataSet generate_dataset(const SynthConfig& cfg, std::uint64_t seed) {
    validate(cfg.source);
    validate(cfg.target);
    if (cfg.counts.labeled_source < 0 || cfg.counts.unlabeled_target < 0 ||
        cfg.counts.test_source < 0 || cfg.counts.test_target < 0)
        throw std::invalid_argument("generate_dataset: counts must be >= 0");
    if (cfg.patch_size < 16)
        throw std::invalid_argument("generate_dataset: patch_size too small");
    if (cfg.test_image_size < cfg.patch_size)
        throw std::invalid_argument("generate_dataset: test_image_size must be >= patch_size");

    GeneratedDataSet out;

    struct Block {
        const char* prefix;
        const DomainParams* params;
        int count;
        int size;
        Provenance prov;
        const char* domain;
        std::vector<std::string>* split;
        bool visible_points;
    };
    Block blocks[4] = {
        {"source_labeled", &cfg.source, cfg.counts.labeled_source, cfg.patch_size,
         Provenance::LabeledSource, "source", &out.data.manifest.labeled_source, true},
        {"target_unlabeled", &cfg.target, cfg.counts.unlabeled_target, cfg.patch_size,
         Provenance::UnlabeledTarget, "target", &out.data.manifest.unlabeled_target, false},
        {"source_test", &cfg.source, cfg.counts.test_source, cfg.test_image_size,
         Provenance::Test, "source", &out.data.manifest.test_source, false},
        {"target_test", &cfg.target, cfg.counts.test_target, cfg.test_image_size,
         Provenance::Test, "target", &out.data.manifest.test_target, false},
    };

    for (const Block& b : blocks) {
        for (int i = 0; i < b.count; ++i) {
            char idx[16];
            std::snprintf(idx, sizeof(idx), "%04d", i);
            const std::string id = std::string(b.prefix) + "_" + idx;
            RenderedPatch r = render_patch(*b.params, b.size, b.size, sub_seed(seed, id));
            PatchSample s;
            s.id = id;
            s.image = std::move(r.image);
            s.domain = b.domain;
            s.provenance = b.prov;
            if (b.visible_points)
                s.points = r.points;
            else
                out.shadow[id] = r.points;
            out.data.samples.push_back(std::move(s));
            b.split->push_back(id);
        }
    }
    return out;
}

} // namespace celladapt
