#include "celladapt/nn/ops.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>

#include <Eigen/Dense>

namespace celladapt::nn {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ColMat = Eigen::MatrixXf;

Conv Conv::create(ParamStore& ps, const std::string& name, int ic, int oc, int k, int stride,
                  int pad) {
    Conv c;
    c.ic = ic;
    c.oc = oc;
    c.k = k;
    c.stride = stride;
    c.pad = pad;
    c.w_off = ps.add(name + ".w", c.weight_count());
    c.b_off = ps.add(name + ".b", static_cast<std::size_t>(oc));
    return c;
}

void Conv::init_he(ParamStore& ps, Rng& rng) const {
    he_init(ps.at(w_off), weight_count(), static_cast<std::size_t>(ic) * k * k, rng);
    std::fill_n(ps.at(b_off), oc, 0.0f);
}

void Conv::init_zero(ParamStore& ps) const {
    std::fill_n(ps.at(w_off), weight_count(), 0.0f);
    std::fill_n(ps.at(b_off), oc, 0.0f);
}

Linear Linear::create(ParamStore& ps, const std::string& name, int in, int out) {
    Linear l;
    l.in = in;
    l.out = out;
    l.w_off = ps.add(name + ".w", static_cast<std::size_t>(in) * out);
    l.b_off = ps.add(name + ".b", static_cast<std::size_t>(out));
    return l;
}

void Linear::init_he(ParamStore& ps, Rng& rng) const {
    he_init(ps.at(w_off), static_cast<std::size_t>(in) * out, static_cast<std::size_t>(in), rng);
    std::fill_n(ps.at(b_off), out, 0.0f);
}

void Linear::init_zero(ParamStore& ps) const {
    std::fill_n(ps.at(w_off), static_cast<std::size_t>(in) * out, 0.0f);
    std::fill_n(ps.at(b_off), out, 0.0f);
}

namespace {

void im2col(const Tensor& in, const Conv& c, int oh, int ow, float* col) {
    const int R = c.ic * c.k * c.k;
    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            float* column = col + static_cast<std::size_t>(oy * ow + ox) * R;
            int r = 0;
            for (int ci = 0; ci < c.ic; ++ci) {
                const float* plane = in.v.data() + static_cast<std::size_t>(ci) * in.h * in.w;
                for (int ky = 0; ky < c.k; ++ky) {
                    const int iy = oy * c.stride + ky - c.pad;
                    for (int kx = 0; kx < c.k; ++kx, ++r) {
                        const int ix = ox * c.stride + kx - c.pad;
                        column[r] = (iy >= 0 && iy < in.h && ix >= 0 && ix < in.w)
                                        ? plane[iy * in.w + ix]
                                        : 0.0f;
                    }
                }
            }
        }
    }
}

void col2im(const float* col, const Conv& c, int oh, int ow, Tensor& din) {
    const int R = c.ic * c.k * c.k;
    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            const float* column = col + static_cast<std::size_t>(oy * ow + ox) * R;
            int r = 0;
            for (int ci = 0; ci < c.ic; ++ci) {
                float* plane = din.v.data() + static_cast<std::size_t>(ci) * din.h * din.w;
                for (int ky = 0; ky < c.k; ++ky) {
                    const int iy = oy * c.stride + ky - c.pad;
                    for (int kx = 0; kx < c.k; ++kx, ++r) {
                        const int ix = ox * c.stride + kx - c.pad;
                        if (iy >= 0 && iy < din.h && ix >= 0 && ix < din.w)
                            plane[iy * din.w + ix] += column[r];
                    }
                }
            }
        }
    }
}

} // namespace

void conv2d_forward(const Tensor& in, const ParamStore& ps, const Conv& c, Tensor& out,
                    std::vector<float>& col_scratch) {
    assert(in.c == c.ic);
    const int oh = c.out_dim(in.h), ow = c.out_dim(in.w);
    out.resize(c.oc, oh, ow);
    const int R = c.ic * c.k * c.k;
    const int N = oh * ow;

    Eigen::Map<const RowMat> W(ps.at(c.w_off), c.oc, R);
    Eigen::Map<RowMat> Out(out.v.data(), c.oc, N);

    const bool identity_cols = (c.k == 1 && c.stride == 1 && c.pad == 0);
    if (identity_cols) {
        Eigen::Map<const RowMat> X(in.v.data(), c.ic, N);
        Out.noalias() = W * X;
    } else {
        col_scratch.resize(static_cast<std::size_t>(R) * N);
        im2col(in, c, oh, ow, col_scratch.data());
        Eigen::Map<const ColMat> Col(col_scratch.data(), R, N);
        Out.noalias() = W * Col;
    }
    const float* b = ps.at(c.b_off);
    for (int co = 0; co < c.oc; ++co)
        Out.row(co).array() += b[co];
}

void conv2d_backward(const Tensor& in, const ParamStore& ps, const Conv& c, const Tensor& dout,
                     Tensor& din, std::vector<float>& grad, std::vector<float>& col_scratch) {
    const int oh = dout.h, ow = dout.w;
    const int R = c.ic * c.k * c.k;
    const int N = oh * ow;

    Eigen::Map<const RowMat> W(ps.at(c.w_off), c.oc, R);
    Eigen::Map<const RowMat> dOut(dout.v.data(), c.oc, N);
    Eigen::Map<RowMat> dW(grad.data() + c.w_off, c.oc, R);
    float* db = grad.data() + c.b_off;

    // Bias gradients use a fixed-order scalar sum: vectorized reductions
    // split by pointer alignment, which would make results depend on heap
    // addresses.
    auto add_bias_grad = [&]() {
        for (int co = 0; co < c.oc; ++co) {
            const float* row = dout.v.data() + static_cast<std::size_t>(co) * N;
            float s = 0.0f;
            for (int i = 0; i < N; ++i) s += row[i];
            db[co] += s;
        }
    };

    const bool identity_cols = (c.k == 1 && c.stride == 1 && c.pad == 0);
    if (identity_cols) {
        Eigen::Map<const RowMat> X(in.v.data(), c.ic, N);
        dW.noalias() += dOut * X.transpose();
        add_bias_grad();
        din.resize(c.ic, in.h, in.w);
        Eigen::Map<RowMat> dX(din.v.data(), c.ic, N);
        dX.noalias() = W.transpose() * dOut;
        return;
    }

    col_scratch.resize(static_cast<std::size_t>(R) * N);
    im2col(in, c, oh, ow, col_scratch.data());
    {
        Eigen::Map<const ColMat> Col(col_scratch.data(), R, N);
        dW.noalias() += dOut * Col.transpose();
    }
    add_bias_grad();

    // Reuse the scratch for the column-space gradient, then scatter.
    {
        Eigen::Map<ColMat> dCol(col_scratch.data(), R, N);
        dCol.noalias() = W.transpose() * dOut;
    }
    din.resize(c.ic, in.h, in.w);
    col2im(col_scratch.data(), c, oh, ow, din);
}

void relu_forward(Tensor& t) {
    for (float& x : t.v)
        if (x < 0.0f) x = 0.0f;
}

void relu_backward(const Tensor& activated, Tensor& d) {
    for (std::size_t i = 0; i < d.v.size(); ++i)
        if (activated.v[i] <= 0.0f) d.v[i] = 0.0f;
}

void instnorm_forward(Tensor& t, std::vector<float>& inv_std) {
    constexpr float eps = 1e-5f;
    inv_std.assign(static_cast<std::size_t>(t.c), 0.0f);
    const int n = t.pixels();
    const float inv_n = 1.0f / static_cast<float>(n);
    for (int c = 0; c < t.c; ++c) {
        float* plane = t.v.data() + static_cast<std::size_t>(c) * n;
        float mean = 0.0f;
        for (int i = 0; i < n; ++i) mean += plane[i];
        mean *= inv_n;
        float var = 0.0f;
        for (int i = 0; i < n; ++i) {
            const float d = plane[i] - mean;
            var += d * d;
        }
        var *= inv_n;
        const float istd = 1.0f / std::sqrt(var + eps);
        inv_std[static_cast<std::size_t>(c)] = istd;
        for (int i = 0; i < n; ++i) plane[i] = (plane[i] - mean) * istd;
    }
}

void instnorm_backward(const Tensor& normalized, const std::vector<float>& inv_std, Tensor& d) {
    const int n = normalized.pixels();
    const float inv_n = 1.0f / static_cast<float>(n);
    for (int c = 0; c < normalized.c; ++c) {
        const float* xn = normalized.v.data() + static_cast<std::size_t>(c) * n;
        float* dy = d.v.data() + static_cast<std::size_t>(c) * n;
        float mean_dy = 0.0f, mean_dyxn = 0.0f;
        for (int i = 0; i < n; ++i) {
            mean_dy += dy[i];
            mean_dyxn += dy[i] * xn[i];
        }
        mean_dy *= inv_n;
        mean_dyxn *= inv_n;
        const float istd = inv_std[static_cast<std::size_t>(c)];
        for (int i = 0; i < n; ++i)
            dy[i] = istd * (dy[i] - mean_dy - xn[i] * mean_dyxn);
    }
}

void maxpool2x2_forward(const Tensor& in, Tensor& out, std::vector<int>& argmax) {
    const int oh = in.h / 2, ow = in.w / 2;
    out.resize(in.c, oh, ow);
    argmax.assign(out.size(), 0);
    for (int c = 0; c < in.c; ++c) {
        const float* plane = in.v.data() + static_cast<std::size_t>(c) * in.h * in.w;
        for (int y = 0; y < oh; ++y) {
            for (int x = 0; x < ow; ++x) {
                int best = (2 * y) * in.w + 2 * x;
                float bv = plane[best];
                const int cand[3] = {(2 * y) * in.w + 2 * x + 1, (2 * y + 1) * in.w + 2 * x,
                                     (2 * y + 1) * in.w + 2 * x + 1};
                for (int idx : cand) {
                    if (plane[idx] > bv) {
                        bv = plane[idx];
                        best = idx;
                    }
                }
                const std::size_t o = (static_cast<std::size_t>(c) * oh + y) * ow + x;
                out.v[o] = bv;
                argmax[o] = c * in.h * in.w + best;
            }
        }
    }
}

void maxpool2x2_backward(const Tensor& dout, const std::vector<int>& argmax, Tensor& din) {
    din.resize(dout.c, dout.h * 2, dout.w * 2);
    for (std::size_t i = 0; i < dout.v.size(); ++i)
        din.v[static_cast<std::size_t>(argmax[i])] += dout.v[i];
}

void upsample2x_forward(const Tensor& in, Tensor& out) {
    out.resize(in.c, in.h * 2, in.w * 2);
    for (int c = 0; c < in.c; ++c)
        for (int y = 0; y < in.h; ++y)
            for (int x = 0; x < in.w; ++x) {
                const float v = in.at(c, y, x);
                out.at(c, 2 * y, 2 * x) = v;
                out.at(c, 2 * y, 2 * x + 1) = v;
                out.at(c, 2 * y + 1, 2 * x) = v;
                out.at(c, 2 * y + 1, 2 * x + 1) = v;
            }
}

void upsample2x_backward(const Tensor& dout, Tensor& din) {
    din.resize(dout.c, dout.h / 2, dout.w / 2);
    for (int c = 0; c < din.c; ++c)
        for (int y = 0; y < din.h; ++y)
            for (int x = 0; x < din.w; ++x)
                din.at(c, y, x) = dout.at(c, 2 * y, 2 * x) + dout.at(c, 2 * y, 2 * x + 1) +
                                  dout.at(c, 2 * y + 1, 2 * x) + dout.at(c, 2 * y + 1, 2 * x + 1);
}

void concat_forward(const Tensor& a, const Tensor& b, Tensor& out) {
    assert(a.h == b.h && a.w == b.w);
    out.resize(a.c + b.c, a.h, a.w);
    std::copy(a.v.begin(), a.v.end(), out.v.begin());
    std::copy(b.v.begin(), b.v.end(), out.v.begin() + static_cast<std::ptrdiff_t>(a.v.size()));
}

void concat_backward(const Tensor& dout, Tensor& da, Tensor& db) {
    std::copy(dout.v.begin(), dout.v.begin() + static_cast<std::ptrdiff_t>(da.v.size()),
              da.v.begin());
    std::copy(dout.v.begin() + static_cast<std::ptrdiff_t>(da.v.size()), dout.v.end(),
              db.v.begin());
}

void add_inplace(Tensor& acc, const Tensor& other) {
    for (std::size_t i = 0; i < acc.v.size(); ++i) acc.v[i] += other.v[i];
}

void global_avg_pool_forward(const Tensor& in, std::vector<float>& out) {
    out.assign(static_cast<std::size_t>(in.c), 0.0f);
    const float inv = 1.0f / static_cast<float>(in.pixels());
    for (int c = 0; c < in.c; ++c) {
        const float* plane = in.v.data() + static_cast<std::size_t>(c) * in.pixels();
        float s = 0.0f;
        for (int i = 0; i < in.pixels(); ++i) s += plane[i];
        out[static_cast<std::size_t>(c)] = s * inv;
    }
}

void global_avg_pool_backward(const std::vector<float>& dout, const Tensor& in_shape,
                              Tensor& din) {
    din.resize(in_shape.c, in_shape.h, in_shape.w);
    const float inv = 1.0f / static_cast<float>(in_shape.pixels());
    for (int c = 0; c < in_shape.c; ++c) {
        float* plane = din.v.data() + static_cast<std::size_t>(c) * din.pixels();
        const float g = dout[static_cast<std::size_t>(c)] * inv;
        for (int i = 0; i < din.pixels(); ++i) plane[i] = g;
    }
}

void linear_forward(const std::vector<float>& in, const ParamStore& ps, const Linear& l,
                    std::vector<float>& out) {
    out.assign(static_cast<std::size_t>(l.out), 0.0f);
    const float* w = ps.at(l.w_off);
    const float* b = ps.at(l.b_off);
    for (int o = 0; o < l.out; ++o) {
        float s = b[o];
        const float* row = w + static_cast<std::size_t>(o) * l.in;
        for (int i = 0; i < l.in; ++i) s += row[i] * in[static_cast<std::size_t>(i)];
        out[static_cast<std::size_t>(o)] = s;
    }
}

void linear_backward(const std::vector<float>& in, const ParamStore& ps, const Linear& l,
                     const std::vector<float>& dout, std::vector<float>& din,
                     std::vector<float>& grad) {
    din.assign(static_cast<std::size_t>(l.in), 0.0f);
    const float* w = ps.at(l.w_off);
    float* dw = grad.data() + l.w_off;
    float* db = grad.data() + l.b_off;
    for (int o = 0; o < l.out; ++o) {
        const float g = dout[static_cast<std::size_t>(o)];
        db[o] += g;
        const float* wrow = w + static_cast<std::size_t>(o) * l.in;
        float* dwrow = dw + static_cast<std::size_t>(o) * l.in;
        for (int i = 0; i < l.in; ++i) {
            dwrow[i] += g * in[static_cast<std::size_t>(i)];
            din[static_cast<std::size_t>(i)] += g * wrow[i];
        }
    }
}

namespace {

void dropout_fill_mask(std::size_t n, float rate, Rng& rng, std::vector<float>& mask) {
    mask.assign(n, 1.0f);
    if (rate <= 0.0f) return;
    const float keep_scale = 1.0f / (1.0f - rate);
    for (std::size_t i = 0; i < n; ++i)
        mask[i] = (rng.uniform() < static_cast<double>(rate)) ? 0.0f : keep_scale;
}

} // namespace

void dropout_forward(Tensor& t, float rate, Rng& rng, std::vector<float>& mask) {
    dropout_fill_mask(t.v.size(), rate, rng, mask);
    if (rate <= 0.0f) return;
    for (std::size_t i = 0; i < t.v.size(); ++i) t.v[i] *= mask[i];
}

void dropout_backward(Tensor& d, const std::vector<float>& mask) {
    for (std::size_t i = 0; i < d.v.size(); ++i) d.v[i] *= mask[i];
}

void dropout_forward(std::vector<float>& v, float rate, Rng& rng, std::vector<float>& mask) {
    dropout_fill_mask(v.size(), rate, rng, mask);
    if (rate <= 0.0f) return;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] *= mask[i];
}

void dropout_backward(std::vector<float>& d, const std::vector<float>& mask) {
    for (std::size_t i = 0; i < d.size(); ++i) d[i] *= mask[i];
}

std::vector<float> softmax(const std::vector<float>& logits) {
    const float mx = *std::max_element(logits.begin(), logits.end());
    std::vector<float> p(logits.size());
    float z = 0.0f;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - mx);
        z += p[i];
    }
    for (float& x : p) x /= z;
    return p;
}

float softmax_xent(const std::vector<float>& logits, int label, std::vector<float>& dlogits) {
    const std::vector<float> p = softmax(logits);
    dlogits = p;
    dlogits[static_cast<std::size_t>(label)] -= 1.0f;
    const float clipped = std::max(p[static_cast<std::size_t>(label)], 1e-12f);
    return -std::log(clipped);
}

float mse_loss(const Tensor& pred, const Tensor& target, Tensor& dpred) {
    dpred.resize(pred.c, pred.h, pred.w);
    const float inv = 1.0f / static_cast<float>(pred.size());
    float loss = 0.0f;
    for (std::size_t i = 0; i < pred.v.size(); ++i) {
        const float e = pred.v[i] - target.v[i];
        loss += e * e;
        dpred.v[i] = 2.0f * e * inv;
    }
    return loss * inv;
}

} // namespace celladapt::nn
