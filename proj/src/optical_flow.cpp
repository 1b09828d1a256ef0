#include "x3d/optical_flow.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "x3d/binary_io.hpp"
#include "x3d/error.hpp"

namespace x3d {
namespace {

// Internal working precision and intensity scale (frames arrive in [0,1]; the
// default lambda is calibrated for 8-bit intensities).
constexpr double kIntensityScale = 255.0;
constexpr double kGradIsZero = 1e-10;

struct Plane {
    std::size_t h = 0, w = 0;
    std::vector<double> px;

    Plane() = default;
    Plane(std::size_t h_, std::size_t w_, double fill = 0.0) : h(h_), w(w_), px(h_ * w_, fill) {}
    double& operator()(std::size_t y, std::size_t x) { return px[y * w + x]; }
    double operator()(std::size_t y, std::size_t x) const { return px[y * w + x]; }
};

double sample_bilinear(const Plane& p, double x, double y) {
    x = std::clamp(x, 0.0, static_cast<double>(p.w - 1));
    y = std::clamp(y, 0.0, static_cast<double>(p.h - 1));
    const auto x0 = static_cast<std::size_t>(x);
    const auto y0 = static_cast<std::size_t>(y);
    const std::size_t x1 = std::min(x0 + 1, p.w - 1);
    const std::size_t y1 = std::min(y0 + 1, p.h - 1);
    const double fx = x - static_cast<double>(x0);
    const double fy = y - static_cast<double>(y0);
    const double top = (1.0 - fx) * p(y0, x0) + fx * p(y0, x1);
    const double bottom = (1.0 - fx) * p(y1, x0) + fx * p(y1, x1);
    return (1.0 - fy) * top + fy * bottom;
}

Plane gaussian_blur(const Plane& in, double sigma) {
    if (sigma <= 0.0) return in;
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) sum += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (auto& v : k) v /= sum;

    const long W = static_cast<long>(in.w), H = static_cast<long>(in.h);
    Plane tmp(in.h, in.w), out(in.h, in.w);
    for (long y = 0; y < H; ++y) {
        for (long x = 0; x < W; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * in(y, std::clamp(x + i, 0L, W - 1));
            tmp(y, x) = acc;
        }
    }
    for (long y = 0; y < H; ++y) {
        for (long x = 0; x < W; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * tmp(std::clamp(y + i, 0L, H - 1), x);
            out(y, x) = acc;
        }
    }
    return out;
}

// Pixel-centre aligned bilinear resampling onto (h, w).
Plane resample(const Plane& in, std::size_t h, std::size_t w) {
    Plane out(h, w);
    const double sy = static_cast<double>(in.h) / static_cast<double>(h);
    const double sx = static_cast<double>(in.w) / static_cast<double>(w);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) out(y, x) = sample_bilinear(in, (x + 0.5) * sx - 0.5, (y + 0.5) * sy - 0.5);
    return out;
}

std::size_t coarser_extent(std::size_t n, double scale) {
    return static_cast<std::size_t>(std::lround(static_cast<double>(n) * scale));
}

void centered_gradient(const Plane& img, Plane& gx, Plane& gy) {
    gx = Plane(img.h, img.w);
    gy = Plane(img.h, img.w);
    for (std::size_t y = 0; y < img.h; ++y) {
        for (std::size_t x = 0; x < img.w; ++x) {
            const std::size_t xl = x == 0 ? 0 : x - 1, xr = std::min(x + 1, img.w - 1);
            const std::size_t yu = y == 0 ? 0 : y - 1, yd = std::min(y + 1, img.h - 1);
            gx(y, x) = 0.5 * (img(y, xr) - img(y, xl));
            gy(y, x) = 0.5 * (img(yd, x) - img(yu, x));
        }
    }
}

// Forward differences, zero on the last column/row.
void forward_gradient(const Plane& f, Plane& fx, Plane& fy) {
    for (std::size_t y = 0; y < f.h; ++y) {
        for (std::size_t x = 0; x < f.w; ++x) {
            fx(y, x) = x + 1 < f.w ? f(y, x + 1) - f(y, x) : 0.0;
            fy(y, x) = y + 1 < f.h ? f(y + 1, x) - f(y, x) : 0.0;
        }
    }
}

// Backward differences with zero boundary; the negative adjoint of forward_gradient.
void divergence(const Plane& p1, const Plane& p2, Plane& div) {
    for (std::size_t y = 0; y < p1.h; ++y) {
        for (std::size_t x = 0; x < p1.w; ++x) {
            double dx;
            if (x == 0) {
                dx = p1(y, x);
            } else if (x + 1 == p1.w) {
                dx = -p1(y, x - 1);
            } else {
                dx = p1(y, x) - p1(y, x - 1);
            }
            double dy;
            if (y == 0) {
                dy = p2(y, x);
            } else if (y + 1 == p1.h) {
                dy = -p2(y - 1, x);
            } else {
                dy = p2(y, x) - p2(y - 1, x);
            }
            div(y, x) = dx + dy;
        }
    }
}

Plane warp_plane(const Plane& img, const Plane& u, const Plane& v) {
    Plane out(img.h, img.w);
    for (std::size_t y = 0; y < img.h; ++y)
        for (std::size_t x = 0; x < img.w; ++x)
            out(y, x) = sample_bilinear(img, static_cast<double>(x) + u(y, x), static_cast<double>(y) + v(y, x));
    return out;
}

double energy(const Plane& i0, const Plane& i1, const Plane& u, const Plane& v, double lambda) {
    const Plane warped = warp_plane(i1, u, v);
    Plane ux(u.h, u.w), uy(u.h, u.w), vx(u.h, u.w), vy(u.h, u.w);
    forward_gradient(u, ux, uy);
    forward_gradient(v, vx, vy);
    double data = 0.0, tv = 0.0;
    for (std::size_t i = 0; i < u.px.size(); ++i) {
        data += std::abs(warped.px[i] - i0.px[i]);
        tv += std::hypot(ux.px[i], uy.px[i]) + std::hypot(vx.px[i], vy.px[i]);
    }
    return lambda * data + tv;
}

// One pyramid level: refines (u, v) in place.
void solve_level(const Plane& i0, const Plane& i1, Plane& u1, Plane& u2, const TvL1Params& prm,
                 std::vector<double>* energies) {
    const std::size_t n = i0.px.size();
    const double lt = prm.lambda * prm.theta;
    const double taut = prm.tau / prm.theta;

    Plane i1x, i1y;
    centered_gradient(i1, i1x, i1y);

    Plane p11(i0.h, i0.w), p12(i0.h, i0.w), p21(i0.h, i0.w), p22(i0.h, i0.w);
    Plane v1(i0.h, i0.w), v2(i0.h, i0.w), div1(i0.h, i0.w), div2(i0.h, i0.w);
    Plane u1x(i0.h, i0.w), u1y(i0.h, i0.w), u2x(i0.h, i0.w), u2y(i0.h, i0.w);
    std::vector<double> grad(n), rho_c(n);

    if (energies) energies->push_back(energy(i0, i1, u1, u2, prm.lambda));
    for (int warp = 0; warp < prm.warps_per_level; ++warp) {
        // Linearise the data term about the current flow.
        const Plane i1w = warp_plane(i1, u1, u2);
        Plane i1wx = warp_plane(i1x, u1, u2);
        Plane i1wy = warp_plane(i1y, u1, u2);
        // Samples that leave the frame carry no usable derivative; dropping it
        // keeps the data term from dragging border flow outwards.
        for (std::size_t y = 0; y < i0.h; ++y) {
            for (std::size_t x = 0; x < i0.w; ++x) {
                const double sx = static_cast<double>(x) + u1(y, x);
                const double sy = static_cast<double>(y) + u2(y, x);
                if (sx < 0.0 || sy < 0.0 || sx > static_cast<double>(i0.w - 1) || sy > static_cast<double>(i0.h - 1)) {
                    i1wx(y, x) = 0.0;
                    i1wy(y, x) = 0.0;
                }
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            grad[i] = i1wx.px[i] * i1wx.px[i] + i1wy.px[i] * i1wy.px[i];
            rho_c[i] = i1w.px[i] - i1wx.px[i] * u1.px[i] - i1wy.px[i] * u2.px[i] - i0.px[i];
        }

        for (int it = 0; it < prm.iterations_per_warp; ++it) {
            // Thresholding step for the auxiliary field.
            for (std::size_t i = 0; i < n; ++i) {
                const double rho = rho_c[i] + i1wx.px[i] * u1.px[i] + i1wy.px[i] * u2.px[i];
                double d1 = 0.0, d2 = 0.0;
                if (rho < -lt * grad[i]) {
                    d1 = lt * i1wx.px[i];
                    d2 = lt * i1wy.px[i];
                } else if (rho > lt * grad[i]) {
                    d1 = -lt * i1wx.px[i];
                    d2 = -lt * i1wy.px[i];
                } else if (grad[i] > kGradIsZero) {
                    const double f = -rho / grad[i];
                    d1 = f * i1wx.px[i];
                    d2 = f * i1wy.px[i];
                }
                v1.px[i] = u1.px[i] + d1;
                v2.px[i] = u2.px[i] + d2;
            }

            // Primal update. The dual field here carries the opposite sign of
            // the textbook u = v - theta*div(p), hence the plus.
            divergence(p11, p12, div1);
            divergence(p21, p22, div2);
            for (std::size_t i = 0; i < n; ++i) {
                u1.px[i] = v1.px[i] + prm.theta * div1.px[i];
                u2.px[i] = v2.px[i] + prm.theta * div2.px[i];
            }

            // Dual ascent with reprojection onto the unit ball.
            forward_gradient(u1, u1x, u1y);
            forward_gradient(u2, u2x, u2y);
            for (std::size_t i = 0; i < n; ++i) {
                const double ng1 = 1.0 + taut * std::hypot(u1x.px[i], u1y.px[i]);
                const double ng2 = 1.0 + taut * std::hypot(u2x.px[i], u2y.px[i]);
                p11.px[i] = (p11.px[i] + taut * u1x.px[i]) / ng1;
                p12.px[i] = (p12.px[i] + taut * u1y.px[i]) / ng1;
                p21.px[i] = (p21.px[i] + taut * u2x.px[i]) / ng2;
                p22.px[i] = (p22.px[i] + taut * u2y.px[i]) / ng2;
            }
        }
        if (energies) energies->push_back(energy(i0, i1, u1, u2, prm.lambda));
    }
}

Plane to_plane(const GrayImage& img) {
    Plane p(img.height, img.width);
    for (std::size_t i = 0; i < p.px.size(); ++i) p.px[i] = kIntensityScale * img.pixels[i];
    return p;
}

void check_frame(const GrayImage& img, const char* which) {
    if (img.pixels.size() != img.height * img.width) {
        throw ShapeError(std::string("compute_flow: ") + which + " pixel count does not match its extents");
    }
    for (float v : img.pixels) {
        if (!std::isfinite(v)) throw NonFiniteError(std::string("compute_flow: non-finite pixel in ") + which);
    }
}

}  // namespace

void TvL1Params::validate() const {
    if (!(lambda > 0.0)) throw ConfigError("flow.lambda must be > 0");
    if (!(theta > 0.0)) throw ConfigError("flow.theta must be > 0");
    if (!(tau > 0.0 && tau <= 0.25)) throw ConfigError("flow.tau must lie in (0, 0.25]");
    if (warps_per_level < 1) throw ConfigError("flow.warps_per_level must be >= 1");
    if (iterations_per_warp < 1) throw ConfigError("flow.iterations_per_warp must be >= 1");
    if (!(pyramid_scale > 0.0 && pyramid_scale < 1.0)) throw ConfigError("flow.pyramid_scale must lie in (0, 1)");
    if (min_level_size < 2) throw ConfigError("flow.min_level_size must be >= 2");
    if (!(clip_limit > 0.0)) throw ConfigError("flow.clip_limit must be > 0");
}

std::size_t pyramid_levels(std::size_t height, std::size_t width, const TvL1Params& params) {
    if (std::min(height, width) < params.min_level_size) return 0;
    std::size_t levels = 1;
    std::size_t h = height, w = width;
    while (true) {
        const std::size_t nh = coarser_extent(h, params.pyramid_scale);
        const std::size_t nw = coarser_extent(w, params.pyramid_scale);
        if (std::min(nh, nw) < params.min_level_size || (nh == h && nw == w)) break;
        h = nh;
        w = nw;
        ++levels;
    }
    return levels;
}

FlowField compute_flow(const GrayImage& frame0, const GrayImage& frame1, const TvL1Params& params, FlowTrace* trace) {
    params.validate();
    if (frame0.height != frame1.height || frame0.width != frame1.width) {
        throw ShapeError("compute_flow: frame shapes differ (" + std::to_string(frame0.height) + "x" +
                         std::to_string(frame0.width) + " vs " + std::to_string(frame1.height) + "x" +
                         std::to_string(frame1.width) + ")");
    }
    check_frame(frame0, "frame0");
    check_frame(frame1, "frame1");
    const std::size_t levels = pyramid_levels(frame0.height, frame0.width, params);
    if (levels == 0) {
        throw ShapeError("compute_flow: image " + std::to_string(frame0.height) + "x" + std::to_string(frame0.width) +
                         " is smaller than min_level_size " + std::to_string(params.min_level_size));
    }

    std::vector<Plane> pyr0{to_plane(frame0)}, pyr1{to_plane(frame1)};
    const double sigma = 0.6 * std::sqrt(1.0 / (params.pyramid_scale * params.pyramid_scale) - 1.0);
    for (std::size_t l = 1; l < levels; ++l) {
        const std::size_t h = coarser_extent(pyr0.back().h, params.pyramid_scale);
        const std::size_t w = coarser_extent(pyr0.back().w, params.pyramid_scale);
        pyr0.push_back(resample(gaussian_blur(pyr0.back(), sigma), h, w));
        pyr1.push_back(resample(gaussian_blur(pyr1.back(), sigma), h, w));
    }

    Plane u(pyr0.back().h, pyr0.back().w), v(pyr0.back().h, pyr0.back().w);
    std::vector<double> energies;
    for (std::size_t l = levels; l-- > 0;) {
        if (u.h != pyr0[l].h || u.w != pyr0[l].w) {
            const double ry = static_cast<double>(pyr0[l].h) / static_cast<double>(u.h);
            const double rx = static_cast<double>(pyr0[l].w) / static_cast<double>(u.w);
            u = resample(u, pyr0[l].h, pyr0[l].w);
            v = resample(v, pyr0[l].h, pyr0[l].w);
            for (auto& x : u.px) x *= rx;
            for (auto& y : v.px) y *= ry;
        }
        solve_level(pyr0[l], pyr1[l], u, v, params, l == 0 && trace ? &energies : nullptr);
    }

    FlowField out(frame0.height, frame0.width);
    const double lim = params.clip_limit;
    for (std::size_t i = 0; i < out.u.size(); ++i) {
        out.u[i] = static_cast<float>(std::clamp(u.px[i], -lim, lim));
        out.v[i] = static_cast<float>(std::clamp(v.px[i], -lim, lim));
    }
    if (trace) {
        trace->levels = levels;
        trace->finest_energy = std::move(energies);
    }
    return out;
}

double tvl1_energy(const GrayImage& frame0, const GrayImage& frame1, const FlowField& flow, double lambda) {
    Plane u(flow.height, flow.width), v(flow.height, flow.width);
    std::copy(flow.u.begin(), flow.u.end(), u.px.begin());
    std::copy(flow.v.begin(), flow.v.end(), v.px.begin());
    return energy(to_plane(frame0), to_plane(frame1), u, v, lambda);
}

GrayImage warp_image(const GrayImage& img, const FlowField& flow) {
    if (img.height != flow.height || img.width != flow.width) throw ShapeError("warp_image: image and flow shapes differ");
    Plane p(img.height, img.width);
    std::copy(img.pixels.begin(), img.pixels.end(), p.px.begin());
    GrayImage out(img.height, img.width);
    for (std::size_t y = 0; y < img.height; ++y) {
        for (std::size_t x = 0; x < img.width; ++x) {
            const std::size_t i = y * img.width + x;
            out.pixels[i] = static_cast<float>(
                sample_bilinear(p, static_cast<double>(x) + flow.u[i], static_cast<double>(y) + flow.v[i]));
        }
    }
    return out;
}

GrayImage clip_frame_gray(const FloatArray& rgb_clip, std::size_t t) {
    if (rgb_clip.rank() != 4 || rgb_clip.dim(0) != 3) {
        throw ShapeError("expected an RGB clip (3,T,H,W), got " + shape_to_string(rgb_clip.shape()));
    }
    const std::size_t T = rgb_clip.dim(1), H = rgb_clip.dim(2), W = rgb_clip.dim(3);
    if (t >= T) throw ShapeError("frame index out of range");
    const std::size_t plane = T * H * W;
    GrayImage g(H, W);
    const float* r = rgb_clip.data().data() + t * H * W;
    for (std::size_t i = 0; i < H * W; ++i) {
        g.pixels[i] = 0.299f * r[i] + 0.587f * r[plane + i] + 0.114f * r[2 * plane + i];
    }
    return g;
}

FloatArray clip_to_flow_clip(const FloatArray& rgb_clip, const TvL1Params& params) {
    if (rgb_clip.rank() != 4 || rgb_clip.dim(0) != 3) {
        throw ShapeError("clip_to_flow_clip: expected (3,T,H,W), got " + shape_to_string(rgb_clip.shape()));
    }
    const std::size_t T = rgb_clip.dim(1), H = rgb_clip.dim(2), W = rgb_clip.dim(3);
    if (T < 2) throw ShapeError("clip_to_flow_clip: need at least 2 frames, got " + std::to_string(T));
    FloatArray out({2, T, H, W});
    const std::size_t hw = H * W;
    const float inv = static_cast<float>(1.0 / params.clip_limit);
    GrayImage prev = clip_frame_gray(rgb_clip, 0);
    for (std::size_t t = 0; t + 1 < T; ++t) {
        GrayImage next = clip_frame_gray(rgb_clip, t + 1);
        const FlowField f = compute_flow(prev, next, params);
        const std::size_t reps = (t + 2 == T) ? 2 : 1;  // last field fills the final slot too
        for (std::size_t r = 0; r < reps; ++r) {
            float* du = out.data().data() + (t + r) * hw;
            float* dv = out.data().data() + T * hw + (t + r) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
                du[i] = f.u[i] * inv;
                dv[i] = f.v[i] * inv;
            }
        }
        prev = std::move(next);
    }
    return out;
}

std::string encode_flow_clip(const FloatArray& flow_clip) {
    if (flow_clip.rank() != 4 || flow_clip.dim(0) != 2) {
        throw ShapeError("encode_flow_clip: expected (2,T,H,W), got " + shape_to_string(flow_clip.shape()));
    }
    ByteWriter w;
    w.bytes("FLO3");
    w.u32(static_cast<std::uint32_t>(flow_clip.dim(1)));
    w.u32(static_cast<std::uint32_t>(flow_clip.dim(2)));
    w.u32(static_cast<std::uint32_t>(flow_clip.dim(3)));
    w.f32s(flow_clip.data());
    return w.take();
}

FloatArray decode_flow_clip(std::string_view bytes, const std::string& context) {
    ByteReader r(bytes, context);
    if (r.bytes(4) != "FLO3") throw FormatError(context + ": bad magic, expected FLO3");
    const std::size_t T = r.u32(), H = r.u32(), W = r.u32();
    if (T == 0 || H == 0 || W == 0) throw FormatError(context + ": zero extent");
    if (r.remaining() != 2 * T * H * W * 4) throw FormatError(context + ": payload size does not match extents");
    std::vector<float> data(2 * T * H * W);
    r.f32s(data);
    return FloatArray({2, T, H, W}, std::move(data));
}

void save_flow_clip(const std::filesystem::path& path, const FloatArray& flow_clip) {
    write_file_atomic(path, encode_flow_clip(flow_clip));
}

FloatArray load_flow_clip(const std::filesystem::path& path) {
    return decode_flow_clip(read_file(path), path.string());
}

}  // namespace x3d
