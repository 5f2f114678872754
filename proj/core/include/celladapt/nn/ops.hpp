#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "celladapt/nn/params.hpp"
#include "celladapt/nn/tensor.hpp"
#include "celladapt/rng.hpp"

namespace celladapt::nn {

/// Convolution layer descriptor; the weights live in a ParamStore.
/// Weight layout is row-major [oc][ic*k*k], bias is [oc].
struct Conv {
    int ic = 0, oc = 0, k = 3, stride = 1, pad = 1;
    std::size_t w_off = 0, b_off = 0;

    static Conv create(ParamStore& ps, const std::string& name, int ic, int oc, int k,
                       int stride, int pad);
    std::size_t weight_count() const {
        return static_cast<std::size_t>(oc) * ic * k * k;
    }
    void init_he(ParamStore& ps, Rng& rng) const;
    void init_zero(ParamStore& ps) const;
    int out_dim(int in_dim) const { return (in_dim + 2 * pad - k) / stride + 1; }
};

struct Linear {
    int in = 0, out = 0;
    std::size_t w_off = 0, b_off = 0;

    static Linear create(ParamStore& ps, const std::string& name, int in, int out);
    void init_he(ParamStore& ps, Rng& rng) const;
    void init_zero(ParamStore& ps) const;
};

// All backward functions ACCUMULATE (+=) into the gradient buffer, which has
// the same layout as the ParamStore values.

void conv2d_forward(const Tensor& in, const ParamStore& ps, const Conv& c, Tensor& out,
                    std::vector<float>& col_scratch);
void conv2d_backward(const Tensor& in, const ParamStore& ps, const Conv& c,
                     const Tensor& dout, Tensor& din, std::vector<float>& grad,
                     std::vector<float>& col_scratch);

void relu_forward(Tensor& t); // in place
void relu_backward(const Tensor& activated, Tensor& d);

/// Per-sample, per-channel standardization (no learned affine). Replaces
/// batch statistics so results never couple across samples. The tensor is
/// normalized in place; inv_std is saved per channel for backward.
void instnorm_forward(Tensor& t, std::vector<float>& inv_std);
void instnorm_backward(const Tensor& normalized, const std::vector<float>& inv_std, Tensor& d);

void maxpool2x2_forward(const Tensor& in, Tensor& out, std::vector<int>& argmax);
void maxpool2x2_backward(const Tensor& dout, const std::vector<int>& argmax, Tensor& din);

void upsample2x_forward(const Tensor& in, Tensor& out);
void upsample2x_backward(const Tensor& dout, Tensor& din);

void concat_forward(const Tensor& a, const Tensor& b, Tensor& out);
void concat_backward(const Tensor& dout, Tensor& da, Tensor& db);

void add_inplace(Tensor& acc, const Tensor& other);

void global_avg_pool_forward(const Tensor& in, std::vector<float>& out);
void global_avg_pool_backward(const std::vector<float>& dout, const Tensor& in_shape,
                              Tensor& din);

void linear_forward(const std::vector<float>& in, const ParamStore& ps, const Linear& l,
                    std::vector<float>& out);
void linear_backward(const std::vector<float>& in, const ParamStore& ps, const Linear& l,
                     const std::vector<float>& dout, std::vector<float>& din,
                     std::vector<float>& grad);

/// Inverted dropout. The mask stores 0 or 1/(1-rate) per element; rate 0
/// leaves the tensor untouched and the mask all-ones.
void dropout_forward(Tensor& t, float rate, Rng& rng, std::vector<float>& mask);
void dropout_backward(Tensor& d, const std::vector<float>& mask);
void dropout_forward(std::vector<float>& v, float rate, Rng& rng, std::vector<float>& mask);
void dropout_backward(std::vector<float>& d, const std::vector<float>& mask);

/// Numerically stable softmax.
std::vector<float> softmax(const std::vector<float>& logits);

/// Cross-entropy on logits; returns loss, fills dlogits = p - onehot(label).
float softmax_xent(const std::vector<float>& logits, int label, std::vector<float>& dlogits);

/// Mean squared error over all elements; fills dpred = 2 (pred - target) / N.
float mse_loss(const Tensor& pred, const Tensor& target, Tensor& dpred);

} // namespace celladapt::nn
