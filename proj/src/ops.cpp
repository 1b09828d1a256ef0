#include "x3d/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "x3d/error.hpp"

namespace x3d {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

void require_rank(const Shape& s, std::size_t rank, const char* op, const char* what) {
    if (s.size() != rank) {
        throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) + ", got " +
                         shape_to_string(s));
    }
}

std::size_t conv_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad, const char* axis) {
    if (stride == 0) throw ShapeError(std::string("conv3d: stride along ") + axis + " must be >= 1");
    if (k > in + 2 * pad) {
        throw ShapeError(std::string("conv3d: kernel extent ") + std::to_string(k) + " exceeds padded input extent " +
                         std::to_string(in + 2 * pad) + " along " + axis);
    }
    return (in + 2 * pad - k) / stride + 1;
}

struct ConvGeometry {
    std::size_t cin, t, h, w;
    std::size_t kt, kh, kw;
    std::size_t ot, oh, ow;
    Triple stride, pad;

    std::size_t patch() const { return cin * kt * kh * kw; }
    std::size_t positions() const { return ot * oh * ow; }
};

// Per-thread im2col workspace; contents are unspecified on return.
template <typename T>
std::vector<T>& scratch_buffer(std::size_t size) {
    thread_local std::vector<T> buffer;
    if (buffer.size() < size) buffer.resize(size);
    return buffer;
}

// Output columns [lo, hi) along one axis whose input index ow*stride + k - pad
// lies inside [0, extent).
struct ValidRange {
    std::size_t lo, hi;
};

ValidRange valid_outputs(std::size_t out, std::size_t extent, std::size_t stride, std::size_t k, std::size_t pad) {
    const long s = static_cast<long>(stride);
    const long first = static_cast<long>(pad) - static_cast<long>(k);  // ow*s >= first
    const long limit = static_cast<long>(extent + pad) - static_cast<long>(k);  // ow*s < limit
    const long lo = first <= 0 ? 0 : (first + s - 1) / s;
    const long hi = limit <= 0 ? 0 : (limit + s - 1) / s;
    const auto clamp = [out](long v) { return static_cast<std::size_t>(std::clamp<long>(v, 0, static_cast<long>(out))); };
    const std::size_t l = clamp(lo), h = clamp(hi);
    return {l, std::max(l, h)};
}

// cols is (cin*kt*kh*kw) x (ot*oh*ow), row-major.
template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
    const std::size_t P = g.positions();
    std::size_t row = 0;
    for (std::size_t c = 0; c < g.cin; ++c) {
        const T* xc = x + c * g.t * g.h * g.w;
        for (std::size_t dt = 0; dt < g.kt; ++dt) {
            for (std::size_t dh = 0; dh < g.kh; ++dh) {
                for (std::size_t dw = 0; dw < g.kw; ++dw, ++row) {
                    const ValidRange r = valid_outputs(g.ow, g.w, g.stride.w, dw, g.pad.w);
                    const long shift = static_cast<long>(dw) - static_cast<long>(g.pad.w);
                    T* out = cols + row * P;
                    for (std::size_t ot = 0; ot < g.ot; ++ot) {
                        const long it = static_cast<long>(ot * g.stride.t + dt) - static_cast<long>(g.pad.t);
                        const bool t_in = it >= 0 && it < static_cast<long>(g.t);
                        for (std::size_t oh = 0; oh < g.oh; ++oh, out += g.ow) {
                            const long ih = static_cast<long>(oh * g.stride.h + dh) - static_cast<long>(g.pad.h);
                            if (!(t_in && ih >= 0 && ih < static_cast<long>(g.h))) {
                                std::fill(out, out + g.ow, T{0});
                                continue;
                            }
                            const T* xrow = xc + (it * static_cast<long>(g.h) + ih) * static_cast<long>(g.w) + shift;
                            std::fill(out, out + r.lo, T{0});
                            if (g.stride.w == 1) {
                                std::copy(xrow + r.lo, xrow + r.hi, out + r.lo);
                            } else {
                                for (std::size_t ow = r.lo; ow < r.hi; ++ow) out[ow] = xrow[ow * g.stride.w];
                            }
                            std::fill(out + r.hi, out + g.ow, T{0});
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, T* dx) {
    const std::size_t P = g.positions();
    std::size_t row = 0;
    for (std::size_t c = 0; c < g.cin; ++c) {
        T* xc = dx + c * g.t * g.h * g.w;
        for (std::size_t dt = 0; dt < g.kt; ++dt) {
            for (std::size_t dh = 0; dh < g.kh; ++dh) {
                for (std::size_t dw = 0; dw < g.kw; ++dw, ++row) {
                    const ValidRange r = valid_outputs(g.ow, g.w, g.stride.w, dw, g.pad.w);
                    const long shift = static_cast<long>(dw) - static_cast<long>(g.pad.w);
                    const T* in = cols + row * P;
                    for (std::size_t ot = 0; ot < g.ot; ++ot) {
                        const long it = static_cast<long>(ot * g.stride.t + dt) - static_cast<long>(g.pad.t);
                        const bool t_in = it >= 0 && it < static_cast<long>(g.t);
                        for (std::size_t oh = 0; oh < g.oh; ++oh, in += g.ow) {
                            const long ih = static_cast<long>(oh * g.stride.h + dh) - static_cast<long>(g.pad.h);
                            if (!(t_in && ih >= 0 && ih < static_cast<long>(g.h))) continue;
                            T* xrow = xc + (it * static_cast<long>(g.h) + ih) * static_cast<long>(g.w) + shift;
                            for (std::size_t ow = r.lo; ow < r.hi; ++ow) xrow[ow * g.stride.w] += in[ow];
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
bool wants_grad(const Node<T>& self, std::size_t i) {
    return self.inputs.size() > i && self.inputs[i]->requires_grad;
}

}  // namespace

template <typename T>
BasicTensor<T> conv3d(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                      Triple stride, Triple padding) {
    const Shape& xs = input.shape();
    const Shape& ws = weight.shape();
    require_rank(xs, 5, "conv3d", "input");
    require_rank(ws, 5, "conv3d", "weight");
    require_rank(bias.shape(), 1, "conv3d", "bias");
    if (ws[1] != xs[1]) {
        throw ShapeError("conv3d: input channel dimension " + std::to_string(xs[1]) +
                         " does not match weight in-channel dimension " + std::to_string(ws[1]));
    }
    if (bias.shape()[0] != ws[0]) {
        throw ShapeError("conv3d: bias dimension " + std::to_string(bias.shape()[0]) +
                         " does not match out-channel dimension " + std::to_string(ws[0]));
    }
    ConvGeometry g{};
    g.cin = xs[1];
    g.t = xs[2];
    g.h = xs[3];
    g.w = xs[4];
    g.kt = ws[2];
    g.kh = ws[3];
    g.kw = ws[4];
    g.stride = stride;
    g.pad = padding;
    g.ot = conv_extent(g.t, g.kt, stride.t, padding.t, "time");
    g.oh = conv_extent(g.h, g.kh, stride.h, padding.h, "height");
    g.ow = conv_extent(g.w, g.kw, stride.w, padding.w, "width");

    const std::size_t N = xs[0];
    const std::size_t cout = ws[0];
    const std::size_t K = g.patch();
    const std::size_t P = g.positions();
    const std::size_t in_stride = g.cin * g.t * g.h * g.w;

    NdArray<T> out({N, cout, g.ot, g.oh, g.ow});
    {
        std::vector<T>& cols = scratch_buffer<T>(K * P);
        ConstMapMat<T> W(weight.value().data().data(), cout, K);
        const T* b = bias.value().data().data();
        for (std::size_t n = 0; n < N; ++n) {
            im2col(input.value().data().data() + n * in_stride, g, cols.data());
            MapMat<T> Y(out.data().data() + n * cout * P, cout, P);
            Y.noalias() = W * ConstMapMat<T>(cols.data(), K, P);
            for (std::size_t o = 0; o < cout; ++o) Y.row(o).array() += b[o];
        }
    }

    auto backward = [g, N, cout, K, P, in_stride](Node<T>& self) {
        const auto& x = self.inputs[0]->value;
        const auto& w = self.inputs[1]->value;
        const T* dy = self.grad.data().data();
        ConstMapMat<T> W(w.data().data(), cout, K);
        const bool need_x = wants_grad(self, 0);
        const bool need_w = wants_grad(self, 1);
        const bool need_b = wants_grad(self, 2);

        std::vector<T>& cols = scratch_buffer<T>(K * P);
        RowMat<T> dW = RowMat<T>::Zero(cout, K);
        std::vector<T> db(cout, T{0});
        std::vector<T> dx;
        if (need_x) dx.assign(N * in_stride, T{0});
        RowMat<T> dcols;
        for (std::size_t n = 0; n < N; ++n) {
            ConstMapMat<T> dY(dy + n * cout * P, cout, P);
            if (need_w) {
                im2col(x.data().data() + n * in_stride, g, cols.data());
                dW.noalias() += dY * ConstMapMat<T>(cols.data(), K, P).transpose();
            }
            if (need_b) {
                for (std::size_t o = 0; o < cout; ++o) {
                    T s = 0;
                    const T* r = dy + (n * cout + o) * P;
                    for (std::size_t p = 0; p < P; ++p) s += r[p];
                    db[o] += s;
                }
            }
            if (need_x) {
                dcols.noalias() = W.transpose() * dY;
                col2im_add(dcols.data(), g, dx.data() + n * in_stride);
            }
        }
        if (need_x) self.inputs[0]->accumulate(dx);
        if (need_w) self.inputs[1]->accumulate(std::span<const T>(dW.data(), cout * K));
        if (need_b) self.inputs[2]->accumulate(db);
    };
    return make_result<T>(std::move(out), {input, weight, bias}, std::move(backward), "conv3d");
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
    NdArray<T> out(x.shape());
    auto src = x.value().data();
    auto dst = out.data();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > T{0} ? src[i] : T{0};
    auto backward = [](Node<T>& self) {
        const auto& xin = self.inputs[0]->value;
        std::vector<T> dx(xin.size());
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = xin[i] > T{0} ? self.grad[i] : T{0};
        self.inputs[0]->accumulate(dx);
    };
    return make_result<T>(std::move(out), {x}, std::move(backward), "relu");
}

template <typename T>
BasicTensor<T> maxpool3d(const BasicTensor<T>& x, Triple window, Triple stride) {
    const Shape& s = x.shape();
    require_rank(s, 5, "maxpool3d", "input");
    if (window.t == 0 || window.h == 0 || window.w == 0) throw ShapeError("maxpool3d: window extents must be >= 1");
    if (stride.t == 0 || stride.h == 0 || stride.w == 0) throw ShapeError("maxpool3d: stride extents must be >= 1");
    const char* axes[3] = {"time", "height", "width"};
    const std::size_t win[3] = {window.t, window.h, window.w};
    for (int a = 0; a < 3; ++a) {
        if (win[a] > s[2 + a]) {
            throw ShapeError(std::string("maxpool3d: window extent ") + std::to_string(win[a]) +
                             " exceeds input extent " + std::to_string(s[2 + a]) + " along " + axes[a]);
        }
    }
    const std::size_t NC = s[0] * s[1];
    const std::size_t T_ = s[2], H = s[3], W = s[4];
    const std::size_t ot = (T_ - window.t) / stride.t + 1;
    const std::size_t oh = (H - window.h) / stride.h + 1;
    const std::size_t ow = (W - window.w) / stride.w + 1;

    NdArray<T> out({s[0], s[1], ot, oh, ow});
    std::vector<std::size_t> argmax(out.size());
    const T* src = x.value().data().data();
    std::size_t o = 0;
    for (std::size_t nc = 0; nc < NC; ++nc) {
        const std::size_t base = nc * T_ * H * W;
        for (std::size_t a = 0; a < ot; ++a) {
            for (std::size_t b = 0; b < oh; ++b) {
                for (std::size_t c = 0; c < ow; ++c, ++o) {
                    std::size_t best = base + ((a * stride.t) * H + b * stride.h) * W + c * stride.w;
                    T best_v = src[best];
                    for (std::size_t dt = 0; dt < window.t; ++dt) {
                        for (std::size_t dh = 0; dh < window.h; ++dh) {
                            for (std::size_t dw = 0; dw < window.w; ++dw) {
                                const std::size_t idx =
                                    base + ((a * stride.t + dt) * H + b * stride.h + dh) * W + c * stride.w + dw;
                                if (src[idx] > best_v) {
                                    best_v = src[idx];
                                    best = idx;
                                }
                            }
                        }
                    }
                    out[o] = best_v;
                    argmax[o] = best;
                }
            }
        }
    }
    auto backward = [argmax = std::move(argmax)](Node<T>& self) {
        std::vector<T> dx(self.inputs[0]->value.size(), T{0});
        for (std::size_t i = 0; i < argmax.size(); ++i) dx[argmax[i]] += self.grad[i];
        self.inputs[0]->accumulate(dx);
    };
    return make_result<T>(std::move(out), {x}, std::move(backward), "maxpool3d");
}

template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& x) {
    const Shape& s = x.shape();
    require_rank(s, 5, "global_avg_pool", "input");
    const std::size_t NC = s[0] * s[1];
    const std::size_t vol = s[2] * s[3] * s[4];
    NdArray<T> out({s[0], s[1]});
    const T* src = x.value().data().data();
    for (std::size_t i = 0; i < NC; ++i) {
        T sum = 0;
        for (std::size_t j = 0; j < vol; ++j) sum += src[i * vol + j];
        out[i] = sum / static_cast<T>(vol);
    }
    auto backward = [NC, vol](Node<T>& self) {
        std::vector<T> dx(NC * vol);
        const T inv = T{1} / static_cast<T>(vol);
        for (std::size_t i = 0; i < NC; ++i) std::fill_n(dx.begin() + i * vol, vol, self.grad[i] * inv);
        self.inputs[0]->accumulate(dx);
    };
    return make_result<T>(std::move(out), {x}, std::move(backward), "global_avg_pool");
}

template <typename T>
BasicTensor<T> adaptive_avg_pool3d(const BasicTensor<T>& x, Triple target) {
    const Shape& s = x.shape();
    require_rank(s, 5, "adaptive_avg_pool3d", "input");
    if (target.t == 0 || target.h == 0 || target.w == 0) throw ShapeError("adaptive_avg_pool3d: zero target extent");
    const std::size_t NC = s[0] * s[1];
    const std::size_t in[3] = {s[2], s[3], s[4]};
    const std::size_t tgt[3] = {target.t, target.h, target.w};
    // Bin edges per axis: [floor(i*in/out), ceil((i+1)*in/out)).
    std::vector<std::pair<std::size_t, std::size_t>> bins[3];
    for (int a = 0; a < 3; ++a) {
        for (std::size_t i = 0; i < tgt[a]; ++i) {
            const std::size_t lo = (i * in[a]) / tgt[a];
            const std::size_t hi = ((i + 1) * in[a] + tgt[a] - 1) / tgt[a];
            bins[a].emplace_back(lo, hi);
        }
    }
    const std::size_t in_vol = in[0] * in[1] * in[2];
    const std::size_t out_vol = tgt[0] * tgt[1] * tgt[2];
    NdArray<T> out({s[0], s[1], target.t, target.h, target.w});
    const T* src = x.value().data().data();
    for (std::size_t nc = 0; nc < NC; ++nc) {
        std::size_t o = nc * out_vol;
        for (auto [t0, t1] : bins[0]) {
            for (auto [h0, h1] : bins[1]) {
                for (auto [w0, w1] : bins[2]) {
                    T sum = 0;
                    for (std::size_t a = t0; a < t1; ++a)
                        for (std::size_t b = h0; b < h1; ++b)
                            for (std::size_t c = w0; c < w1; ++c) sum += src[nc * in_vol + (a * in[1] + b) * in[2] + c];
                    out[o++] = sum / static_cast<T>((t1 - t0) * (h1 - h0) * (w1 - w0));
                }
            }
        }
    }
    auto backward = [NC, in_vol, out_vol, H = in[1], W = in[2], b0 = bins[0], b1 = bins[1],
                     b2 = bins[2]](Node<T>& self) {
        std::vector<T> dx(NC * in_vol, T{0});
        for (std::size_t nc = 0; nc < NC; ++nc) {
            std::size_t o = nc * out_vol;
            for (auto [t0, t1] : b0) {
                for (auto [h0, h1] : b1) {
                    for (auto [w0, w1] : b2) {
                        const T g = self.grad[o++] / static_cast<T>((t1 - t0) * (h1 - h0) * (w1 - w0));
                        for (std::size_t a = t0; a < t1; ++a)
                            for (std::size_t b = h0; b < h1; ++b)
                                for (std::size_t c = w0; c < w1; ++c) dx[nc * in_vol + (a * H + b) * W + c] += g;
                    }
                }
            }
        }
        self.inputs[0]->accumulate(dx);
    };
    return make_result<T>(std::move(out), {x}, std::move(backward), "adaptive_avg_pool3d");
}

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias) {
    require_rank(x.shape(), 2, "linear", "input");
    require_rank(weight.shape(), 2, "linear", "weight");
    require_rank(bias.shape(), 1, "linear", "bias");
    const std::size_t N = x.shape()[0], din = x.shape()[1], dout = weight.shape()[0];
    if (weight.shape()[1] != din) {
        throw ShapeError("linear: input feature dimension " + std::to_string(din) +
                         " does not match weight inner dimension " + std::to_string(weight.shape()[1]));
    }
    if (bias.shape()[0] != dout) {
        throw ShapeError("linear: bias dimension " + std::to_string(bias.shape()[0]) +
                         " does not match output dimension " + std::to_string(dout));
    }
    NdArray<T> out({N, dout});
    {
        ConstMapMat<T> X(x.value().data().data(), N, din);
        ConstMapMat<T> Wm(weight.value().data().data(), dout, din);
        MapMat<T> Y(out.data().data(), N, dout);
        Y.noalias() = X * Wm.transpose();
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t j = 0; j < dout; ++j) Y(n, j) += bias.value()[j];
    }
    auto backward = [N, din, dout](Node<T>& self) {
        ConstMapMat<T> dY(self.grad.data().data(), N, dout);
        if (wants_grad(self, 0)) {
            ConstMapMat<T> Wm(self.inputs[1]->value.data().data(), dout, din);
            RowMat<T> dX = dY * Wm;
            self.inputs[0]->accumulate(std::span<const T>(dX.data(), N * din));
        }
        if (wants_grad(self, 1)) {
            ConstMapMat<T> X(self.inputs[0]->value.data().data(), N, din);
            RowMat<T> dW = dY.transpose() * X;
            self.inputs[1]->accumulate(std::span<const T>(dW.data(), dout * din));
        }
        if (wants_grad(self, 2)) {
            std::vector<T> db(dout, T{0});
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t j = 0; j < dout; ++j) db[j] += dY(n, j);
            self.inputs[2]->accumulate(db);
        }
    };
    return make_result<T>(std::move(out), {x, weight, bias}, std::move(backward), "linear");
}

template <typename T>
BasicTensor<T> concat_features(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    require_rank(a.shape(), 2, "concat_features", "first input");
    require_rank(b.shape(), 2, "concat_features", "second input");
    const std::size_t N = a.shape()[0];
    if (b.shape()[0] != N) {
        throw ShapeError("concat_features: batch dimension " + std::to_string(N) + " vs " +
                         std::to_string(b.shape()[0]));
    }
    const std::size_t da = a.shape()[1], dbw = b.shape()[1];
    NdArray<T> out({N, da + dbw});
    for (std::size_t n = 0; n < N; ++n) {
        std::copy_n(a.value().data().begin() + n * da, da, out.data().begin() + n * (da + dbw));
        std::copy_n(b.value().data().begin() + n * dbw, dbw, out.data().begin() + n * (da + dbw) + da);
    }
    auto backward = [N, da, dbw](Node<T>& self) {
        const T* g = self.grad.data().data();
        if (wants_grad(self, 0)) {
            std::vector<T> ga(N * da);
            for (std::size_t n = 0; n < N; ++n) std::copy_n(g + n * (da + dbw), da, ga.begin() + n * da);
            self.inputs[0]->accumulate(ga);
        }
        if (wants_grad(self, 1)) {
            std::vector<T> gb(N * dbw);
            for (std::size_t n = 0; n < N; ++n) std::copy_n(g + n * (da + dbw) + da, dbw, gb.begin() + n * dbw);
            self.inputs[1]->accumulate(gb);
        }
    };
    return make_result<T>(std::move(out), {a, b}, std::move(backward), "concat_features");
}

template <typename T>
BasicTensor<T> mse(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("mse: shape mismatch " + shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
    }
    const auto av = a.value().data();
    const auto bv = b.value().data();
    double sum = 0;
    for (std::size_t i = 0; i < av.size(); ++i) {
        const double d = static_cast<double>(av[i]) - static_cast<double>(bv[i]);
        sum += d * d;
    }
    const std::size_t n = av.size();
    NdArray<T> out({1}, static_cast<T>(sum / static_cast<double>(n)));
    auto backward = [n](Node<T>& self) {
        const auto& x = self.inputs[0]->value;
        const auto& y = self.inputs[1]->value;
        const T k = T{2} * self.grad[0] / static_cast<T>(n);
        std::vector<T> d(n);
        for (std::size_t i = 0; i < n; ++i) d[i] = k * (x[i] - y[i]);
        if (wants_grad(self, 0)) self.inputs[0]->accumulate(d);
        if (wants_grad(self, 1)) {
            for (auto& v : d) v = -v;
            self.inputs[1]->accumulate(d);
        }
    };
    return make_result<T>(std::move(out), {a, b}, std::move(backward), "mse");
}

template <typename T>
NdArray<T> softmax(const NdArray<T>& logits) {
    if (logits.rank() != 2) throw ShapeError("softmax: logits must be (N,C), got " + shape_to_string(logits.shape()));
    const std::size_t N = logits.dim(0), C = logits.dim(1);
    NdArray<T> p(logits.shape());
    for (std::size_t n = 0; n < N; ++n) {
        const T* z = logits.data().data() + n * C;
        T* q = p.data().data() + n * C;
        const T m = *std::max_element(z, z + C);
        T sum = 0;
        for (std::size_t c = 0; c < C; ++c) {
            q[c] = std::exp(z[c] - m);
            sum += q[c];
        }
        for (std::size_t c = 0; c < C; ++c) q[c] /= sum;
    }
    return p;
}

template <typename T>
CrossEntropyResult<T> softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const std::int32_t> labels) {
    require_rank(logits.shape(), 2, "softmax_cross_entropy", "logits");
    const std::size_t N = logits.shape()[0], C = logits.shape()[1];
    if (labels.size() != N) {
        throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch dimension " +
                         std::to_string(N));
    }
    for (std::int32_t y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= C) {
            throw Error("softmax_cross_entropy: label " + std::to_string(y) + " outside [0, " + std::to_string(C) +
                        ")");
        }
    }
    NdArray<T> probs = softmax(logits.value());
    T loss = 0;
    for (std::size_t n = 0; n < N; ++n) {
        const T* z = logits.value().data().data() + n * C;
        const T m = *std::max_element(z, z + C);
        T sum = 0;
        for (std::size_t c = 0; c < C; ++c) sum += std::exp(z[c] - m);
        loss += std::log(sum) - (z[labels[n]] - m);
    }
    loss /= static_cast<T>(N);
    std::vector<std::int32_t> y(labels.begin(), labels.end());
    auto backward = [probs, y = std::move(y), N, C](Node<T>& self) {
        const T k = self.grad[0] / static_cast<T>(N);
        std::vector<T> dz(N * C);
        for (std::size_t n = 0; n < N; ++n) {
            for (std::size_t c = 0; c < C; ++c) {
                const T target = static_cast<std::size_t>(y[n]) == c ? T{1} : T{0};
                dz[n * C + c] = k * (probs[n * C + c] - target);
            }
        }
        self.inputs[0]->accumulate(dz);
    };
    auto out = make_result<T>(NdArray<T>({1}, loss), {logits}, std::move(backward), "softmax_cross_entropy");
    return {std::move(out), std::move(probs)};
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("add: shape mismatch " + shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
    }
    NdArray<T> out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
    auto backward = [](Node<T>& self) {
        if (wants_grad(self, 0)) self.inputs[0]->accumulate(self.grad.data());
        if (wants_grad(self, 1)) self.inputs[1]->accumulate(self.grad.data());
    };
    return make_result<T>(std::move(out), {a, b}, std::move(backward), "add");
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, T factor) {
    NdArray<T> out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] * factor;
    auto backward = [factor](Node<T>& self) {
        std::vector<T> d(self.grad.size());
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = self.grad[i] * factor;
        self.inputs[0]->accumulate(d);
    };
    return make_result<T>(std::move(out), {x}, std::move(backward), "scale");
}

template <typename T>
BasicTensor<T> weighted_sum(const BasicTensor<T>& x, const NdArray<T>& weights) {
    if (x.size() != weights.size()) throw ShapeError("weighted_sum: weight count does not match tensor size");
    T sum = 0;
    for (std::size_t i = 0; i < x.size(); ++i) sum += x.value()[i] * weights[i];
    auto backward = [weights](Node<T>& self) {
        std::vector<T> d(weights.size());
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = self.grad[0] * weights[i];
        self.inputs[0]->accumulate(d);
    };
    return make_result<T>(NdArray<T>({1}, sum), {x}, std::move(backward), "weighted_sum");
}

#define X3D_INSTANTIATE_OPS(T)                                                                                  \
    template BasicTensor<T> conv3d(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, Triple, \
                                   Triple);                                                                     \
    template BasicTensor<T> relu(const BasicTensor<T>&);                                                        \
    template BasicTensor<T> maxpool3d(const BasicTensor<T>&, Triple, Triple);                                   \
    template BasicTensor<T> global_avg_pool(const BasicTensor<T>&);                                             \
    template BasicTensor<T> adaptive_avg_pool3d(const BasicTensor<T>&, Triple);                                 \
    template BasicTensor<T> linear(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&);        \
    template BasicTensor<T> concat_features(const BasicTensor<T>&, const BasicTensor<T>&);                      \
    template BasicTensor<T> mse(const BasicTensor<T>&, const BasicTensor<T>&);                                  \
    template NdArray<T> softmax(const NdArray<T>&);                                                             \
    template CrossEntropyResult<T> softmax_cross_entropy(const BasicTensor<T>&, std::span<const std::int32_t>); \
    template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                                  \
    template BasicTensor<T> scale(const BasicTensor<T>&, T);                                                    \
    template BasicTensor<T> weighted_sum(const BasicTensor<T>&, const NdArray<T>&);

X3D_INSTANTIATE_OPS(float)
X3D_INSTANTIATE_OPS(double)

}  // namespace x3d
