#pragma once

#include <cstddef>
#include <vector>

namespace celladapt::nn {

/// CHW float tensor. Channel planes are contiguous row-major images.
struct Tensor {
    int c = 0, h = 0, w = 0;
    std::vector<float> v;

    Tensor() = default;
    Tensor(int c_, int h_, int w_)
        : c(c_), h(h_), w(w_), v(static_cast<std::size_t>(c_) * h_ * w_, 0.0f) {}

    void resize(int c_, int h_, int w_) {
        c = c_;
        h = h_;
        w = w_;
        v.assign(static_cast<std::size_t>(c_) * h_ * w_, 0.0f);
    }

    std::size_t size() const { return v.size(); }
    int pixels() const { return h * w; }

    float& at(int ch, int y, int x) {
        return v[(static_cast<std::size_t>(ch) * h + y) * w + x];
    }
    float at(int ch, int y, int x) const {
        return v[(static_cast<std::size_t>(ch) * h + y) * w + x];
    }
};

} // namespace celladapt::nn
