#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "celladapt/rng.hpp"

namespace celladapt::nn {

/// Flat parameter storage shared by a model's layers. Offsets are stable
/// once layers are registered, so gradients and optimizer state use the
/// same layout.
class ParamStore {
public:
    struct Entry {
        std::string name;
        std::size_t offset = 0;
        std::size_t count = 0;
    };

    std::size_t add(const std::string& name, std::size_t count) {
        const std::size_t off = values.size();
        entries.push_back({name, off, count});
        values.resize(off + count, 0.0f);
        return off;
    }

    float* at(std::size_t offset) { return values.data() + offset; }
    const float* at(std::size_t offset) const { return values.data() + offset; }
    std::size_t size() const { return values.size(); }

    std::vector<float> values;
    std::vector<Entry> entries;
};

/// Adam with bias correction. Moment buffers live here so that checkpoints
/// can resume fine-tuning exactly.
struct AdamOpt {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    long step = 0;
    std::vector<float> m, v;

    void apply(ParamStore& ps, const std::vector<float>& grad) {
        if (m.size() != ps.size()) m.assign(ps.size(), 0.0f);
        if (v.size() != ps.size()) v.assign(ps.size(), 0.0f);
        ++step;
        const float b1t = 1.0f - std::pow(beta1, static_cast<float>(step));
        const float b2t = 1.0f - std::pow(beta2, static_cast<float>(step));
        for (std::size_t i = 0; i < ps.size(); ++i) {
            const float g = grad[i];
            m[i] = beta1 * m[i] + (1.0f - beta1) * g;
            v[i] = beta2 * v[i] + (1.0f - beta2) * g * g;
            const float mhat = m[i] / b1t;
            const float vhat = v[i] / b2t;
            ps.values[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
};

/// He-normal initialization for a weight block with the given fan-in.
inline void he_init(float* w, std::size_t count, std::size_t fan_in, Rng& rng) {
    const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (std::size_t i = 0; i < count; ++i)
        w[i] = static_cast<float>(rng.normal(0.0, std));
}

} // namespace celladapt::nn
