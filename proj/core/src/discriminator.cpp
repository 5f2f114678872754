#include "celladapt/discriminator.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <omp.h>

#include "celladapt/errors.hpp"

namespace celladapt {

using nn::Tensor;

std::vector<PairSample> make_training_pairs(std::span<const PatchSample> labeled,
                                            int neg_per_pos, const PairCorruptionConfig& cfg,
                                            std::uint64_t seed) {
    if (neg_per_pos < 0)
        throw std::invalid_argument("make_training_pairs: neg_per_pos must be >= 0");
    if (cfg.shift_min_sigmas < 2.0f)
        throw std::invalid_argument("make_training_pairs: shift_min_sigmas must be >= 2");

    std::vector<PairSample> pairs;
    for (const PatchSample& s : labeled) {
        if (!s.points.has_value())
            throw std::invalid_argument("make_training_pairs: sample '" + s.id +
                                        "' has no points");
        const std::vector<Point>& pts = *s.points;
        const int n = static_cast<int>(pts.size());

        PairSample pos;
        pos.id = s.id + "#pos";
        pos.image = s.image;
        pos.heatmap =
            encode_points(pts, s.image.height, s.image.width, cfg.sigma, cfg.amplitude);
        pos.label = 0;
        pairs.push_back(std::move(pos));

        for (int j = 0; j < neg_per_pos; ++j) {
            Rng rng(sub_seed(sub_seed(seed, s.id), static_cast<std::uint64_t>(j)));
            int mode = rng.uniform_int(0, 2);
            while (n == 0 && mode != 0) // only add applies to an empty scene
                mode = rng.uniform_int(0, 2);

            CorruptionSpec spec;
            switch (mode) {
            case 0:
                spec.mode = CorruptionMode::Add;
                spec.count = rng.uniform_int(1, cfg.max_count);
                break;
            case 1:
                spec.mode = CorruptionMode::Remove;
                spec.count = rng.uniform_int(1, std::min(cfg.max_count, n));
                break;
            default:
                spec.mode = CorruptionMode::Shift;
                spec.count = rng.uniform_int(1, std::min(cfg.max_count, n));
                break;
            }
            spec.shift_min = cfg.shift_min_sigmas * cfg.sigma;
            spec.shift_max = cfg.shift_max_sigmas * cfg.sigma;

            Corruption corr = corrupt(pts, s.image.height, s.image.width, spec, cfg.sigma,
                                      cfg.amplitude, rng.next_u64());
            PairSample neg;
            neg.id = s.id + "#neg" + std::to_string(j);
            neg.image = s.image;
            neg.heatmap = std::move(corr.heatmap);
            neg.label = 1;
            pairs.push_back(std::move(neg));
        }
    }
    return pairs;
}

void DiscriminatorModel::build_layers() {
    const int w = arch_.width;
    stem_ = nn::Conv::create(ps_, "stem", 2, w, 3, 2, 1);
    for (int i = 0; i < 4; ++i) {
        const int wi = w << i;
        c1_[i] = nn::Conv::create(ps_, "s" + std::to_string(i) + "c1", wi, wi, 3, 1, 1);
        c2_[i] = nn::Conv::create(ps_, "s" + std::to_string(i) + "c2", wi, wi, 3, 1, 1);
        if (i < 3)
            down_[i] = nn::Conv::create(ps_, "down" + std::to_string(i), wi, wi * 2, 3, 2, 1);
    }
    head_ = nn::Linear::create(ps_, "head", w << 3, 2);
}

DiscriminatorModel::DiscriminatorModel(const Arch& arch, std::uint64_t init_seed) : arch_(arch) {
    if (arch_.width < 1)
        throw std::invalid_argument("DiscriminatorModel: width must be >= 1");
    if (arch_.dropout < 0.0f || arch_.dropout >= 1.0f)
        throw std::invalid_argument("DiscriminatorModel: dropout rate must be in [0, 1)");
    build_layers();
    Rng rng(init_seed);
    stem_.init_he(ps_, rng);
    for (int i = 0; i < 4; ++i) {
        c1_[i].init_he(ps_, rng);
        c2_[i].init_he(ps_, rng);
        if (i < 3) down_[i].init_he(ps_, rng);
    }
    head_.init_zero(ps_); // constant logits -> p = (0.5, 0.5) before training
}

void DiscriminatorModel::forward(const Tensor& input, Acts& a, const ForwardOpts& opts) const {
    if (input.c != 2 || input.h % 16 != 0 || input.w % 16 != 0)
        throw std::invalid_argument(
            "DiscriminatorModel: input must be 2xHxW with H, W divisible by 16");
    const float rate = opts.dropout_active ? arch_.dropout : 0.0f;
    if (rate > 0.0f && opts.rng == nullptr)
        throw std::invalid_argument("DiscriminatorModel: dropout requires an RNG");
    Rng unused(0); // dropout_forward never draws from it when rate == 0
    Rng& drop_rng = rate > 0.0f ? *opts.rng : unused;
    a.in = input;

    nn::conv2d_forward(a.in, ps_, stem_, a.stem_n, a.col);
    nn::instnorm_forward(a.stem_n, a.stem_istd);
    a.stem = a.stem_n;
    nn::relu_forward(a.stem);

    const Tensor* x = &a.stem;
    for (int i = 0; i < 4; ++i) {
        nn::conv2d_forward(*x, ps_, c1_[i], a.b1n[i], a.col);
        nn::instnorm_forward(a.b1n[i], a.b1_istd[i]);
        a.b1[i] = a.b1n[i];
        nn::relu_forward(a.b1[i]);
        nn::conv2d_forward(a.b1[i], ps_, c2_[i], a.b2n[i], a.col);
        nn::instnorm_forward(a.b2n[i], a.b2_istd[i]);
        a.block2[i] = a.b2n[i];
        nn::add_inplace(a.block2[i], *x);
        nn::relu_forward(a.block2[i]);
        a.stage_out[i] = a.block2[i];
        nn::dropout_forward(a.stage_out[i], rate, drop_rng, a.drop_mask[i]);
        if (i < 3) {
            nn::conv2d_forward(a.stage_out[i], ps_, down_[i], a.down_n[i + 1], a.col);
            nn::instnorm_forward(a.down_n[i + 1], a.down_istd[i + 1]);
            a.down[i + 1] = a.down_n[i + 1];
            nn::relu_forward(a.down[i + 1]);
            x = &a.down[i + 1];
        }
    }

    nn::global_avg_pool_forward(a.stage_out[3], a.gap);
    a.gap_dropped = a.gap;
    nn::dropout_forward(a.gap_dropped, rate, drop_rng, a.head_mask);
    nn::linear_forward(a.gap_dropped, ps_, head_, a.logits);
}

void DiscriminatorModel::backward(const std::vector<float>& dlogits, Acts& a,
                                  std::vector<float>& grad) const {
    std::vector<float> dgap;
    nn::linear_backward(a.gap_dropped, ps_, head_, dlogits, dgap, grad);
    nn::dropout_backward(dgap, a.head_mask);

    Tensor g, t, t2, gid;
    nn::global_avg_pool_backward(dgap, a.stage_out[3], g);

    for (int i = 3; i >= 0; --i) {
        nn::dropout_backward(g, a.drop_mask[i]);
        nn::relu_backward(a.block2[i], g); // g = gradient at the residual sum
        gid = g;                           // identity branch
        nn::instnorm_backward(a.b2n[i], a.b2_istd[i], g);
        nn::conv2d_backward(a.b1[i], ps_, c2_[i], g, t, grad, a.col);
        nn::relu_backward(a.b1[i], t);
        nn::instnorm_backward(a.b1n[i], a.b1_istd[i], t);
        const Tensor& x = (i == 0) ? a.stem : a.down[i];
        nn::conv2d_backward(x, ps_, c1_[i], t, t2, grad, a.col);
        nn::add_inplace(t2, gid); // conv path + identity path

        if (i == 0) {
            nn::relu_backward(a.stem, t2);
            nn::instnorm_backward(a.stem_n, a.stem_istd, t2);
            nn::conv2d_backward(a.in, ps_, stem_, t2, g, grad, a.col);
        } else {
            nn::relu_backward(a.down[i], t2);
            nn::instnorm_backward(a.down_n[i], a.down_istd[i], t2);
            nn::conv2d_backward(a.stage_out[i - 1], ps_, down_[i - 1], t2, g, grad, a.col);
        }
    }
}

std::vector<float> DiscriminatorModel::features(const Tensor& input) const {
    Acts acts;
    forward(input, acts, {});
    return acts.gap;
}

nn::Checkpoint DiscriminatorModel::to_checkpoint(const std::string& config_hash) const {
    nn::Checkpoint ck;
    ck.kind = "resnet-discriminator";
    ck.arch["width"] = arch_.width;
    ck.arch["dropout"] = arch_.dropout;
    ck.config_hash = config_hash;
    ck.values = ps_.values;
    ck.adam = adam_;
    return ck;
}

DiscriminatorModel DiscriminatorModel::from_checkpoint(const nn::Checkpoint& ck) {
    if (ck.kind != "resnet-discriminator")
        throw DataError("checkpoint kind '" + ck.kind + "' is not a discriminator checkpoint");
    Arch arch;
    arch.width = static_cast<int>(ck.arch.at("width"));
    arch.dropout = static_cast<float>(ck.arch.at("dropout"));
    DiscriminatorModel m(arch, 0);
    if (ck.values.size() != m.ps_.size())
        throw DataError("discriminator checkpoint has " + std::to_string(ck.values.size()) +
                        " parameters, expected " + std::to_string(m.ps_.size()));
    m.ps_.values = ck.values;
    m.adam_ = ck.adam;
    return m;
}

nn::Tensor make_pair_tensor(const Image& image, const Image& heatmap) {
    if (!image.same_shape(heatmap))
        throw std::invalid_argument("make_pair_tensor: image and heatmap shapes differ");
    Tensor t(2, image.height, image.width);
    const float scale = 1.0f / 255.0f;
    for (std::size_t i = 0; i < image.data.size(); ++i) t.v[i] = image.data[i] * scale;
    float* ch1 = t.v.data() + image.data.size();
    for (std::size_t i = 0; i < heatmap.data.size(); ++i) ch1[i] = heatmap.data[i] * scale;
    return t;
}

TrainRecord train_discriminator(DiscriminatorModel& model, std::span<const PairSample> pairs,
                                const TrainConfig& cfg) {
    if (pairs.empty())
        throw std::invalid_argument("train_discriminator: empty pair list");
    if (cfg.epochs < 1)
        throw std::invalid_argument("train_discriminator: epochs must be >= 1");
    if (cfg.batch_size < 1 || cfg.batch_size > 256)
        throw std::invalid_argument("train_discriminator: batch_size must be in [1, 256]");
    if (!(cfg.learning_rate > 0.0f))
        throw std::invalid_argument("train_discriminator: learning rate must be positive");
    bool has0 = false, has1 = false;
    for (const PairSample& p : pairs) {
        if (p.label != 0 && p.label != 1)
            throw std::invalid_argument("train_discriminator: pair '" + p.id +
                                        "' has label " + std::to_string(p.label));
        (p.label == 0 ? has0 : has1) = true;
    }
    if (!has0 || !has1)
        throw std::invalid_argument(
            "train_discriminator: both classes must be present (degenerate single-class input)");

    model.optimizer().lr = cfg.learning_rate;
    nn::ParamStore& ps = model.params();

    const int n = static_cast<int>(pairs.size());
    const int max_b = std::min(cfg.batch_size, n);
    const int nthreads = std::max(1, omp_get_max_threads());

    std::vector<DiscriminatorModel::Acts> acts(static_cast<std::size_t>(nthreads));
    std::vector<std::vector<float>> slot_grad(static_cast<std::size_t>(max_b));
    std::vector<float> slot_loss(static_cast<std::size_t>(max_b), 0.0f);
    std::vector<float> grad(ps.size(), 0.0f);

    Rng order_rng(sub_seed(cfg.seed, "order"));
    Rng dropout_rng(sub_seed(cfg.seed, "dropout"));

    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

    TrainRecord rec;
    std::vector<std::uint64_t> drop_seeds(static_cast<std::size_t>(max_b));
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        order_rng.shuffle(order);
        double epoch_loss = 0.0;
        for (int start = 0; start < n; start += max_b) {
            const int bn = std::min(max_b, n - start);
            for (int j = 0; j < bn; ++j) drop_seeds[static_cast<std::size_t>(j)] =
                dropout_rng.next_u64();

#pragma omp parallel for schedule(static)
            for (int j = 0; j < bn; ++j) {
                const int t = omp_get_thread_num();
                const PairSample& p = pairs[static_cast<std::size_t>(
                    order[static_cast<std::size_t>(start + j)])];
                auto& g = slot_grad[static_cast<std::size_t>(j)];
                g.assign(ps.size(), 0.0f);
                DiscriminatorModel::Acts& a = acts[static_cast<std::size_t>(t)];
                Rng drop_rng(drop_seeds[static_cast<std::size_t>(j)]);
                DiscriminatorModel::ForwardOpts opts;
                opts.dropout_active = true;
                opts.rng = &drop_rng;
                model.forward(make_pair_tensor(p.image, p.heatmap.grid), a, opts);
                std::vector<float> dlogits;
                slot_loss[static_cast<std::size_t>(j)] =
                    nn::softmax_xent(a.logits, p.label, dlogits);
                model.backward(dlogits, a, g);
            }

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

double pair_accuracy(const DiscriminatorModel& model, std::span<const PairSample> pairs) {
    if (pairs.empty())
        throw std::invalid_argument("pair_accuracy: empty pair list");
    int correct = 0;
    DiscriminatorModel::Acts acts;
    for (const PairSample& p : pairs) {
        model.forward(make_pair_tensor(p.image, p.heatmap.grid), acts, {});
        const int pred = acts.logits[1] > acts.logits[0] ? 1 : 0;
        if (pred == p.label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(pairs.size());
}

UncertaintyScore mc_uncertainty(const DiscriminatorModel& model, const PairSample& pair, int T,
                                std::uint64_t seed) {
    if (T < 1)
        throw std::invalid_argument("mc_uncertainty: T must be >= 1, got " + std::to_string(T));

    const Tensor input = make_pair_tensor(pair.image, pair.heatmap.grid);
    UncertaintyScore u;
    u.per_pass.resize(static_cast<std::size_t>(T));

    DiscriminatorModel::Acts acts;
    for (int t = 0; t < T; ++t) {
        Rng pass_rng(sub_seed(seed, static_cast<std::uint64_t>(t)));
        DiscriminatorModel::ForwardOpts opts;
        opts.dropout_active = true;
        opts.rng = &pass_rng;
        model.forward(input, acts, opts);
        const std::vector<float> p = nn::softmax(acts.logits);
        u.per_pass[static_cast<std::size_t>(t)] = static_cast<double>(p[1]);
    }

    double sum = 0.0;
    for (double x : u.per_pass) sum += x;
    u.score = sum / static_cast<double>(T);
    double var = 0.0;
    for (double x : u.per_pass) var += (x - u.score) * (x - u.score);
    u.variance = var / static_cast<double>(T);
    return u;
}

UncertaintyMetric uncertainty_metric_from_string(const std::string& name) {
    if (name == "mean_p1") return UncertaintyMetric::MeanP1;
    if (name == "variance") return UncertaintyMetric::Variance;
    throw ConfigError("unknown uncertainty_metric '" + name + "' (mean_p1 | variance)");
}

double metric_value(const UncertaintyScore& u, UncertaintyMetric metric) {
    return metric == UncertaintyMetric::MeanP1 ? u.score : u.variance;
}

std::vector<ScoredCandidate> score_candidates_generated(
    const DiscriminatorModel& model, std::size_t count,
    const std::function<PairSample(std::size_t)>& make_pair, int T, std::uint64_t seed,
    UncertaintyMetric metric) {
    if (count == 0)
        throw std::invalid_argument("score_candidates: empty candidate list");

    std::vector<ScoredCandidate> scored(count);
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(count); ++i) {
        const PairSample pair = make_pair(static_cast<std::size_t>(i));
        ScoredCandidate sc;
        sc.id = pair.id;
        sc.uncertainty = mc_uncertainty(model, pair, T, sub_seed(seed, pair.id));
        scored[static_cast<std::size_t>(i)] = std::move(sc);
    }

    std::sort(scored.begin(), scored.end(),
              [metric](const ScoredCandidate& a, const ScoredCandidate& b) {
                  const double va = metric_value(a.uncertainty, metric);
                  const double vb = metric_value(b.uncertainty, metric);
                  if (va != vb) return va < vb;
                  return a.id < b.id;
              });
    return scored;
}

std::vector<ScoredCandidate> score_candidates(const DiscriminatorModel& model,
                                              std::span<const PairSample> candidates, int T,
                                              std::uint64_t seed, UncertaintyMetric metric) {
    return score_candidates_generated(
        model, candidates.size(),
        [&](std::size_t i) { return candidates[i]; }, T, seed, metric);
}

} // namespace celladapt
