#include "celladapt/detector.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <omp.h>

#include "celladapt/errors.hpp"
#include "celladapt/rng.hpp"

namespace celladapt {

using nn::Tensor;

std::vector<DetectorExample> make_detector_examples(std::span<const PatchSample> samples,
                                                    float sigma, float amplitude) {
    std::vector<DetectorExample> out;
    out.reserve(samples.size());
    for (const PatchSample& s : samples) {
        if (!s.points.has_value())
            throw std::invalid_argument("sample '" + s.id +
                                        "' has no points; cannot build a target heatmap");
        DetectorExample ex;
        ex.id = s.id;
        ex.image = s.image;
        ex.target = encode_points(*s.points, s.image.height, s.image.width, sigma, amplitude).grid;
        out.push_back(std::move(ex));
    }
    return out;
}

void DetectorModel::build_layers() {
    const int w = arch_.width;
    int in_ch = 1;
    for (int i = 0; i < 5; ++i) {
        const int wi = w << std::min(i, 4);
        enc_a_[i] = nn::Conv::create(ps_, "enc" + std::to_string(i) + "a", in_ch, wi, 3, 1, 1);
        enc_b_[i] = nn::Conv::create(ps_, "enc" + std::to_string(i) + "b", wi, wi, 3, 1, 1);
        in_ch = wi;
    }
    for (int i = 3; i >= 0; --i) {
        const int wi = w << i;
        const int src = (i == 3) ? (w << 4) : (w << (i + 1));
        up_[i] = nn::Conv::create(ps_, "up" + std::to_string(i), src, wi, 3, 1, 1);
        dec_a_[i] = nn::Conv::create(ps_, "dec" + std::to_string(i) + "a", 2 * wi, wi, 3, 1, 1);
        dec_b_[i] = nn::Conv::create(ps_, "dec" + std::to_string(i) + "b", wi, wi, 3, 1, 1);
    }
    head_ = nn::Conv::create(ps_, "head", w, 1, 1, 1, 0);
}

DetectorModel::DetectorModel(const Arch& arch, std::uint64_t init_seed) : arch_(arch) {
    if (arch_.width < 1)
        throw std::invalid_argument("DetectorModel: width must be >= 1");
    build_layers();
    Rng rng(init_seed);
    for (int i = 0; i < 5; ++i) {
        enc_a_[i].init_he(ps_, rng);
        enc_b_[i].init_he(ps_, rng);
    }
    for (int i = 3; i >= 0; --i) {
        up_[i].init_he(ps_, rng);
        dec_a_[i].init_he(ps_, rng);
        dec_b_[i].init_he(ps_, rng);
    }
    head_.init_zero(ps_); // empty heatmap at initialization
}

void DetectorModel::forward(const Tensor& input, Acts& a) const {
    if (input.c != 1 || input.h % 16 != 0 || input.w % 16 != 0)
        throw std::invalid_argument("DetectorModel: input must be 1xHxW with H, W divisible by 16");
    a.in = input;

    const Tensor* cur = &a.in;
    for (int i = 0; i < 5; ++i) {
        nn::conv2d_forward(*cur, ps_, enc_a_[i], a.enc_a[i], a.col);
        nn::relu_forward(a.enc_a[i]);
        nn::conv2d_forward(a.enc_a[i], ps_, enc_b_[i], a.enc_b[i], a.col);
        nn::relu_forward(a.enc_b[i]);
        if (i < 4) {
            nn::maxpool2x2_forward(a.enc_b[i], a.pooled[i], a.argmax[i]);
            cur = &a.pooled[i];
        }
    }

    const Tensor* src = &a.enc_b[4];
    for (int i = 3; i >= 0; --i) {
        nn::upsample2x_forward(*src, a.up[i]);
        nn::conv2d_forward(a.up[i], ps_, up_[i], a.upc[i], a.col);
        nn::relu_forward(a.upc[i]);
        nn::concat_forward(a.upc[i], a.enc_b[i], a.cat[i]);
        nn::conv2d_forward(a.cat[i], ps_, dec_a_[i], a.dec_a[i], a.col);
        nn::relu_forward(a.dec_a[i]);
        nn::conv2d_forward(a.dec_a[i], ps_, dec_b_[i], a.dec_b[i], a.col);
        nn::relu_forward(a.dec_b[i]);
        src = &a.dec_b[i];
    }
    nn::conv2d_forward(a.dec_b[0], ps_, head_, a.out, a.col);
}

void DetectorModel::backward(const Tensor& dout, Acts& a, std::vector<float>& grad) const {
    Tensor& g = a.g0;
    Tensor& t = a.g1;
    Tensor skip_grad[4];

    // head
    nn::conv2d_backward(a.dec_b[0], ps_, head_, dout, g, grad, a.col);

    // decoder, nearest level first
    for (int i = 0; i <= 3; ++i) {
        nn::relu_backward(a.dec_b[i], g);
        nn::conv2d_backward(a.dec_a[i], ps_, dec_b_[i], g, t, grad, a.col);
        nn::relu_backward(a.dec_a[i], t);
        nn::conv2d_backward(a.cat[i], ps_, dec_a_[i], t, g, grad, a.col);
        // split concat gradient into the up path and the skip path
        Tensor dup(a.upc[i].c, a.upc[i].h, a.upc[i].w);
        skip_grad[i].resize(a.enc_b[i].c, a.enc_b[i].h, a.enc_b[i].w);
        nn::concat_backward(g, dup, skip_grad[i]);
        nn::relu_backward(a.upc[i], dup);
        nn::conv2d_backward(a.up[i], ps_, up_[i], dup, t, grad, a.col);
        nn::upsample2x_backward(t, g); // g = grad at the stage below
    }

    // bottleneck
    nn::relu_backward(a.enc_b[4], g);
    nn::conv2d_backward(a.enc_a[4], ps_, enc_b_[4], g, t, grad, a.col);
    nn::relu_backward(a.enc_a[4], t);
    nn::conv2d_backward(a.pooled[3], ps_, enc_a_[4], t, g, grad, a.col);

    // encoder, deepest level first; fold in the skip gradients
    for (int i = 3; i >= 0; --i) {
        nn::maxpool2x2_backward(g, a.argmax[i], t);
        nn::add_inplace(t, skip_grad[i]);
        nn::relu_backward(a.enc_b[i], t);
        nn::conv2d_backward(a.enc_a[i], ps_, enc_b_[i], t, g, grad, a.col);
        nn::relu_backward(a.enc_a[i], g);
        const Tensor& conv_in = (i == 0) ? a.in : a.pooled[i - 1];
        nn::conv2d_backward(conv_in, ps_, enc_a_[i], g, t, grad, a.col);
        std::swap(a.g0, a.g1); // t becomes g for the next level
    }
}

nn::Checkpoint DetectorModel::to_checkpoint(const std::string& config_hash) const {
    nn::Checkpoint ck;
    ck.kind = "unet";
    ck.arch["width"] = arch_.width;
    ck.config_hash = config_hash;
    ck.values = ps_.values;
    ck.adam = adam_;
    return ck;
}

DetectorModel DetectorModel::from_checkpoint(const nn::Checkpoint& ck) {
    if (ck.kind != "unet")
        throw DataError("checkpoint kind '" + ck.kind + "' is not a detector checkpoint");
    Arch arch;
    arch.width = static_cast<int>(ck.arch.at("width"));
    DetectorModel m(arch, 0);
    if (ck.values.size() != m.ps_.size())
        throw DataError("detector checkpoint has " + std::to_string(ck.values.size()) +
                        " parameters, expected " + std::to_string(m.ps_.size()));
    m.ps_.values = ck.values;
    m.adam_ = ck.adam;
    return m;
}

namespace {

// Dihedral transforms for augmentation: bit 2 transposes, bit 1 flips rows,
// bit 0 flips columns. Only used on square patches.
void image_to_tensor(const Image& img, int transform, Tensor& out) {
    out.resize(1, img.height, img.width);
    const float scale = 1.0f / 255.0f;
    if (transform == 0) {
        for (std::size_t i = 0; i < img.data.size(); ++i) out.v[i] = img.data[i] * scale;
        return;
    }
    const int h = img.height, w = img.width;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            int sy = y, sx = x;
            if (transform & 4) std::swap(sy, sx);
            if (transform & 2) sy = h - 1 - sy;
            if (transform & 1) sx = w - 1 - sx;
            out.at(0, y, x) = img.at(sy, sx) * scale;
        }
    }
}

} // namespace

TrainRecord train_detector(DetectorModel& model, std::span<const DetectorExample> examples,
                           const TrainConfig& cfg) {
    if (examples.empty())
        throw std::invalid_argument("train_detector: empty sample list");
    if (cfg.epochs < 1)
        throw std::invalid_argument("train_detector: epochs must be >= 1, got " +
                                    std::to_string(cfg.epochs));
    if (cfg.batch_size < 1 || cfg.batch_size > 256)
        throw std::invalid_argument("train_detector: batch_size must be in [1, 256]");
    if (!(cfg.learning_rate > 0.0f))
        throw std::invalid_argument("train_detector: learning rate must be positive");
    for (const DetectorExample& ex : examples) {
        if (!ex.image.same_shape(ex.target))
            throw std::invalid_argument("sample '" + ex.id + "': image and target shapes differ");
        if (cfg.augment && ex.image.height != ex.image.width)
            throw std::invalid_argument("sample '" + ex.id +
                                        "': augmentation requires square patches");
    }

    model.optimizer().lr = cfg.learning_rate;
    nn::ParamStore& ps = model.params();

    const int n = static_cast<int>(examples.size());
    const int max_b = std::min(cfg.batch_size, n);
    const int nthreads = std::max(1, omp_get_max_threads());

    std::vector<DetectorModel::Acts> acts(static_cast<std::size_t>(nthreads));
    std::vector<Tensor> input_scratch(static_cast<std::size_t>(nthreads));
    std::vector<Tensor> target_scratch(static_cast<std::size_t>(nthreads));
    std::vector<Tensor> dpred_scratch(static_cast<std::size_t>(nthreads));
    std::vector<std::vector<float>> slot_grad(static_cast<std::size_t>(max_b));
    std::vector<float> slot_loss(static_cast<std::size_t>(max_b), 0.0f);
    std::vector<float> grad(ps.size(), 0.0f);

    Rng order_rng(sub_seed(cfg.seed, "order"));
    Rng aug_rng(sub_seed(cfg.seed, "augment"));

    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

    TrainRecord rec;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        order_rng.shuffle(order);
        double epoch_loss = 0.0;
        for (int start = 0; start < n; start += max_b) {
            const int bn = std::min(max_b, n - start);
            int tf[256] = {0};
            if (cfg.augment)
                for (int j = 0; j < bn; ++j) tf[j] = aug_rng.uniform_int(0, 7);

#pragma omp parallel for schedule(static)
            for (int j = 0; j < bn; ++j) {
                const int t = omp_get_thread_num();
                const DetectorExample& ex = examples[static_cast<std::size_t>(
                    order[static_cast<std::size_t>(start + j)])];
                auto& g = slot_grad[static_cast<std::size_t>(j)];
                g.assign(ps.size(), 0.0f);
                image_to_tensor(ex.image, tf[j], input_scratch[static_cast<std::size_t>(t)]);
                image_to_tensor(ex.target, tf[j], target_scratch[static_cast<std::size_t>(t)]);
                DetectorModel::Acts& a = acts[static_cast<std::size_t>(t)];
                model.forward(input_scratch[static_cast<std::size_t>(t)], a);
                slot_loss[static_cast<std::size_t>(j)] =
                    nn::mse_loss(a.out, target_scratch[static_cast<std::size_t>(t)],
                                 dpred_scratch[static_cast<std::size_t>(t)]);
                model.backward(dpred_scratch[static_cast<std::size_t>(t)], a, g);
            }

            // Fixed-order reduction keeps results independent of thread count.
            std::fill(grad.begin(), grad.end(), 0.0f);
            for (int j = 0; j < bn; ++j) {
                const std::vector<float>& g = slot_grad[static_cast<std::size_t>(j)];
                for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += g[k];
            }
            const float inv_bn = 1.0f / static_cast<float>(bn);
            for (float& x : grad) x *= inv_bn;
            model.optimizer().apply(ps, grad);

            for (int j = 0; j < bn; ++j) epoch_loss += slot_loss[static_cast<std::size_t>(j)];
        }
        rec.epoch_loss.push_back(static_cast<float>(epoch_loss / n));
    }
    return rec;
}

PositionHeatmap predict_heatmap(const DetectorModel& model, const Image& image, float sigma,
                                float amplitude) {
    if (image.height % 16 != 0 || image.width % 16 != 0)
        throw std::invalid_argument("predict_heatmap: image shape " + std::to_string(image.width) +
                                    "x" + std::to_string(image.height) +
                                    " not divisible by 16");
    DetectorModel::Acts acts;
    Tensor in;
    image_to_tensor(image, 0, in);
    model.forward(in, acts);

    PositionHeatmap hm;
    hm.sigma = sigma;
    hm.amplitude = amplitude;
    hm.grid = Image(image.height, image.width);
    for (std::size_t i = 0; i < acts.out.v.size(); ++i)
        hm.grid.data[i] = std::clamp(acts.out.v[i] * 255.0f, 0.0f, 255.0f);
    return hm;
}

namespace {

// One past-the-end responsibility boundary per tile, partitioning the axis.
// Interior boundaries sit `margin` pixels into the next tile, so every cell
// is owned by a tile that sees its whole neighborhood.
std::vector<int> region_bounds(const std::vector<int>& starts, int dim, int margin) {
    std::vector<int> b;
    for (std::size_t i = 1; i < starts.size(); ++i) b.push_back(starts[i] + margin);
    b.push_back(dim);
    return b;
}

} // namespace

std::vector<Point> predict_full_image(const DetectorModel& model, const Image& image,
                                      float th_d, int nms_radius, int patch_size) {
    if (image.height < patch_size || image.width < patch_size)
        throw std::invalid_argument("predict_full_image: image " + std::to_string(image.width) +
                                    "x" + std::to_string(image.height) + " smaller than patch " +
                                    std::to_string(patch_size));

    // Tiles overlap so that no cell is ever split by a seam; each tile only
    // reports peaks from the part of the image it is responsible for.
    const int margin = 2 * nms_radius;
    const int stride = std::max(patch_size - 2 * margin, patch_size / 2);
    const std::vector<int> xs = tile_starts(image.width, patch_size, stride);
    const std::vector<int> ys = tile_starts(image.height, patch_size, stride);
    const std::vector<int> xb = region_bounds(xs, image.width, margin);
    const std::vector<int> yb = region_bounds(ys, image.height, margin);

    DetectorModel::Acts acts;
    Tensor in;
    Image tile(patch_size, patch_size);
    std::vector<Peak> all;
    for (std::size_t yi = 0; yi < ys.size(); ++yi) {
        for (std::size_t xi = 0; xi < xs.size(); ++xi) {
            const int y0 = ys[yi], x0 = xs[xi];
            for (int y = 0; y < patch_size; ++y)
                for (int x = 0; x < patch_size; ++x)
                    tile.at(y, x) = image.at(y0 + y, x0 + x);
            image_to_tensor(tile, 0, in);
            model.forward(in, acts);
            Image grid(patch_size, patch_size);
            for (std::size_t i = 0; i < acts.out.v.size(); ++i)
                grid.data[i] = std::clamp(acts.out.v[i] * 255.0f, 0.0f, 255.0f);
            const int rx0 = xi == 0 ? 0 : xb[xi - 1], rx1 = xb[xi];
            const int ry0 = yi == 0 ? 0 : yb[yi - 1], ry1 = yb[yi];
            for (const Peak& p : detect_peaks_valued(grid, th_d, nms_radius)) {
                const int gx = p.x + x0, gy = p.y + y0;
                if (gx >= rx0 && gx < rx1 && gy >= ry0 && gy < ry1)
                    all.push_back({gx, gy, p.value});
            }
        }
    }

    // Keep the higher-valued peak when tile seams produce duplicates.
    std::sort(all.begin(), all.end(), [](const Peak& a, const Peak& b) {
        if (a.value != b.value) return a.value > b.value;
        return a.y != b.y ? a.y < b.y : a.x < b.x;
    });
    std::vector<Peak> kept;
    const float r2 = static_cast<float>(nms_radius) * static_cast<float>(nms_radius);
    for (const Peak& p : all) {
        bool dup = false;
        for (const Peak& q : kept) {
            const float dx = static_cast<float>(p.x - q.x);
            const float dy = static_cast<float>(p.y - q.y);
            if (dx * dx + dy * dy <= r2) {
                dup = true;
                break;
            }
        }
        if (!dup) kept.push_back(p);
    }

    std::vector<Point> out;
    out.reserve(kept.size());
    for (const Peak& p : kept) out.push_back({static_cast<float>(p.x), static_cast<float>(p.y)});
    std::sort(out.begin(), out.end(), raster_less);
    return out;
}

} // namespace celladapt
