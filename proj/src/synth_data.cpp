#include "x3d/synth_data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include "x3d/binary_io.hpp"
#include "x3d/error.hpp"
#include "x3d/rng.hpp"

namespace x3d {
namespace {

constexpr std::size_t kMinFrameSize = 16;
constexpr int kSupersample = 4;
constexpr double kOrbitRadius = 6.0;
constexpr double kTextureAmplitude = 0.06;
constexpr double kMinRadius = 6.0;
constexpr double kMaxRadius = 8.0;

// Fraction of the middle radius added per frame (times speed) by expand/contract.
constexpr double kGrowthPerSpeed = 0.3;

struct Scene {
    ShapeKind shape;
    std::array<float, 3> fg;
    std::array<float, 3> bg;
    std::array<double, 2> middle;  // centre at the middle frame
    double radius;                 // radius at the middle frame
    double phase;                  // orbit angle at the middle frame
    // static periodic background texture
    int kx[2], ky[2];
    double tex_phase[2];
};

Scene sample_scene(const ActionClassSpec& action, const SceneConfig& config, ClipExtent ext, std::uint64_t seed) {
    Scene s{};
    auto shape_rng = named_stream(seed, "shape");
    s.shape = static_cast<ShapeKind>(shape_rng() % 3);
    s.radius = kMinRadius + (kMaxRadius - kMinRadius) * shape_rng.uniform();

    auto color_rng = named_stream(seed, "color");
    std::array<float, 3> light{}, dark{};
    for (auto& c : light) c = static_cast<float>(0.5 + 0.5 * color_rng.uniform());
    for (auto& c : dark) c = static_cast<float>(0.05 + 0.25 * color_rng.uniform());
    // Half the clips show a dark object on a light background.
    const bool dark_object = (color_rng() & 1) != 0;
    s.fg = dark_object ? dark : light;
    s.bg = dark_object ? light : dark;
    if (config.appearance_cue) s.fg = class_color(action.class_id);

    auto pos_rng = named_stream(seed, "position");
    const double cx = 0.5 * static_cast<double>(ext.w), cy = 0.5 * static_cast<double>(ext.h);
    // Same placement range for every class, small enough that the fastest
    // pattern (a translation, whose reach also bounds an orbit chord) stays inside.
    const double reach = action.speed * 0.5 * static_cast<double>(ext.t - 1) + kMaxRadius;
    const double jitter_x = std::clamp(cx - reach, 0.0, 6.0);
    const double jitter_y = std::clamp(cy - reach, 0.0, 6.0);
    s.middle = {cx + jitter_x * (2.0 * pos_rng.uniform() - 1.0), cy + jitter_y * (2.0 * pos_rng.uniform() - 1.0)};
    s.phase = 2.0 * std::numbers::pi * pos_rng.uniform();

    auto tex_rng = named_stream(seed, "texture");
    for (int i = 0; i < 2; ++i) {
        s.kx[i] = 1 + static_cast<int>(tex_rng() % 3);
        s.ky[i] = 1 + static_cast<int>(tex_rng() % 3);
        s.tex_phase[i] = 2.0 * std::numbers::pi * tex_rng.uniform();
    }
    return s;
}

// Centre and radius at frame t, before camera motion.
void trajectory(const ActionClassSpec& a, const Scene& s, ClipExtent ext, std::size_t t, double& x, double& y,
                double& r) {
    const double dt = static_cast<double>(t) - 0.5 * static_cast<double>(ext.t - 1);
    x = s.middle[0];
    y = s.middle[1];
    r = s.radius;
    switch (a.pattern) {
        case MotionPattern::TranslateLeft: x -= a.speed * dt; break;
        case MotionPattern::TranslateRight: x += a.speed * dt; break;
        case MotionPattern::TranslateUp: y -= a.speed * dt; break;
        case MotionPattern::TranslateDown: y += a.speed * dt; break;
        case MotionPattern::OrbitCw:
        case MotionPattern::OrbitCcw: {
            // y grows downwards, so increasing angle turns clockwise on screen.
            const double dir = a.pattern == MotionPattern::OrbitCw ? 1.0 : -1.0;
            const double ox = x - kOrbitRadius * std::cos(s.phase);
            const double oy = y - kOrbitRadius * std::sin(s.phase);
            const double ang = s.phase + dir * (a.speed / kOrbitRadius) * dt;
            x = ox + kOrbitRadius * std::cos(ang);
            y = oy + kOrbitRadius * std::sin(ang);
            break;
        }
        case MotionPattern::Expand: r += kGrowthPerSpeed * a.speed * dt; break;
        case MotionPattern::Contract: r -= kGrowthPerSpeed * a.speed * dt; break;
    }
    r = std::max(r, 1.0);
    // Objects stop at the frame border.
    const double W = static_cast<double>(ext.w), H = static_cast<double>(ext.h);
    x = std::clamp(x, std::min(r, 0.5 * W), std::max(W - r, 0.5 * W));
    y = std::clamp(y, std::min(r, 0.5 * H), std::max(H - r, 0.5 * H));
}

bool inside(ShapeKind shape, double px, double py, double cx, double cy, double r) {
    const double dx = px - cx, dy = py - cy;
    switch (shape) {
        case ShapeKind::Square: return std::abs(dx) <= r && std::abs(dy) <= r;
        case ShapeKind::Disc: return dx * dx + dy * dy <= r * r;
        case ShapeKind::Triangle: {
            // Upward equilateral triangle with circumradius r.
            const double s3 = std::sqrt(3.0);
            if (dy > 0.5 * r) return false;
            return s3 * dx - dy <= r && -s3 * dx - dy <= r;
        }
    }
    return false;
}

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

template <typename T>
T parse_number(std::string_view text, const std::string& context) {
    T value{};
    const char* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc() || ptr != end) throw FormatError(context + ": cannot parse number '" + std::string(text) + "'");
    return value;
}

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

}  // namespace

std::string_view to_string(MotionPattern p) {
    switch (p) {
        case MotionPattern::TranslateLeft: return "translate-left";
        case MotionPattern::TranslateRight: return "translate-right";
        case MotionPattern::TranslateUp: return "translate-up";
        case MotionPattern::TranslateDown: return "translate-down";
        case MotionPattern::OrbitCw: return "orbit-cw";
        case MotionPattern::OrbitCcw: return "orbit-ccw";
        case MotionPattern::Expand: return "expand";
        case MotionPattern::Contract: return "contract";
    }
    return "?";
}

std::vector<ActionClassSpec> action_classes(std::size_t num_classes, double speed) {
    if (num_classes < 2 || num_classes > kNumMotionPatterns) {
        throw ConfigError("data.num_classes must lie in [2, 8], got " + std::to_string(num_classes));
    }
    std::vector<ActionClassSpec> out;
    for (std::size_t i = 0; i < num_classes; ++i) {
        out.push_back({static_cast<int>(i), static_cast<MotionPattern>(i), speed});
    }
    return out;
}

std::array<float, 3> class_color(int class_id) {
    static constexpr std::array<std::array<float, 3>, 8> palette{{
        {1.00f, 0.55f, 0.55f},
        {0.55f, 1.00f, 0.55f},
        {0.60f, 0.70f, 1.00f},
        {1.00f, 1.00f, 0.50f},
        {1.00f, 0.55f, 1.00f},
        {0.50f, 1.00f, 1.00f},
        {1.00f, 0.80f, 0.50f},
        {0.90f, 0.90f, 0.90f},
    }};
    return palette[static_cast<std::size_t>(class_id) % palette.size()];
}

std::vector<std::array<int, 2>> sample_camera_steps(double sigma, std::size_t count, std::uint64_t seed) {
    std::vector<std::array<int, 2>> steps(count, {0, 0});
    if (sigma <= 0.0) return steps;
    SplitMix64 rng(seed);
    std::normal_distribution<double> normal(0.0, sigma);
    for (auto& s : steps) {
        s[0] = static_cast<int>(std::lround(normal(rng)));
        s[1] = static_cast<int>(std::lround(normal(rng)));
    }
    return steps;
}

FloatArray render_clip(const ActionClassSpec& action, const SceneConfig& scene, ClipExtent ext,
                       std::uint64_t render_seed, RenderTrace* trace) {
    if (ext.h < kMinFrameSize || ext.w < kMinFrameSize) {
        throw ShapeError("render_clip: frame " + std::to_string(ext.h) + "x" + std::to_string(ext.w) +
                         " is smaller than " + std::to_string(kMinFrameSize) + " px");
    }
    if (ext.t == 0) throw ShapeError("render_clip: clip needs at least one frame");
    if (!(scene.camera_noise_sigma >= 0.0)) throw ConfigError("camera_noise_sigma must be >= 0");

    const Scene s = sample_scene(action, scene, ext, render_seed);
    const std::size_t T = ext.t, H = ext.h, W = ext.w, HW = H * W;

    // Static background (luma-modulated texture, periodic so wrapping is seamless).
    std::vector<float> bg(3 * HW);
    for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) {
            double tex = 0.0;
            for (int i = 0; i < 2; ++i) {
                tex += std::sin(2.0 * std::numbers::pi * (s.kx[i] * double(x) / double(W) + s.ky[i] * double(y) / double(H)) +
                                s.tex_phase[i]);
            }
            tex *= 0.5 * kTextureAmplitude;
            for (std::size_t c = 0; c < 3; ++c) bg[c * HW + y * W + x] = clamp01(s.bg[c] + tex);
        }
    }

    std::vector<std::array<int, 2>> offsets(T, {0, 0});
    {
        const auto steps = sample_camera_steps(scene.camera_noise_sigma, T > 0 ? T - 1 : 0,
                                               derive_seed(render_seed, "camera"));
        for (std::size_t t = 1; t < T; ++t) {
            offsets[t] = {offsets[t - 1][0] + steps[t - 1][0], offsets[t - 1][1] + steps[t - 1][1]};
        }
    }

    if (trace) {
        *trace = RenderTrace{};
        trace->shape = s.shape;
        trace->foreground = s.fg;
        trace->background = s.bg;
        trace->camera_offsets = offsets;
    }

    FloatArray clip({3, T, H, W});
    std::vector<float> frame(3 * HW);
    constexpr double inv_ss = 1.0 / kSupersample;
    for (std::size_t t = 0; t < T; ++t) {
        double cx, cy, r;
        trajectory(action, s, ext, t, cx, cy, r);
        if (trace) {
            trace->centers.push_back({cx, cy});
            trace->radii.push_back(r);
        }
        // Pixel (x, y) covers [x, x+1) x [y, y+1); coverage by supersampling.
        for (std::size_t y = 0; y < H; ++y) {
            for (std::size_t x = 0; x < W; ++x) {
                int hits = 0;
                for (int sy = 0; sy < kSupersample; ++sy)
                    for (int sx = 0; sx < kSupersample; ++sx)
                        hits += inside(s.shape, double(x) + (sx + 0.5) * inv_ss, double(y) + (sy + 0.5) * inv_ss, cx, cy, r);
                const double a = hits / double(kSupersample * kSupersample);
                for (std::size_t c = 0; c < 3; ++c) {
                    const std::size_t k = c * HW + y * W + x;
                    frame[k] = clamp01((1.0 - a) * bg[k] + a * s.fg[c]);
                }
            }
        }
        // Toroidal camera shift: content moves by the cumulative offset.
        const long ox = offsets[t][0], oy = offsets[t][1];
        const long Hl = static_cast<long>(H), Wl = static_cast<long>(W);
        for (std::size_t c = 0; c < 3; ++c) {
            float* dst = clip.data().data() + (c * T + t) * HW;
            for (long y = 0; y < Hl; ++y) {
                const long sy = ((y - oy) % Hl + Hl) % Hl;
                for (long x = 0; x < Wl; ++x) {
                    const long sx = ((x - ox) % Wl + Wl) % Wl;
                    dst[y * Wl + x] = frame[c * HW + sy * Wl + sx];
                }
            }
        }
    }
    return clip;
}

std::string encode_clip(const FloatArray& clip) {
    if (clip.rank() != 4) throw ShapeError("encode_clip: expected (C,T,H,W), got " + shape_to_string(clip.shape()));
    ByteWriter w;
    w.bytes("VCLP");
    for (std::size_t e : clip.shape()) w.u32(static_cast<std::uint32_t>(e));
    w.f32s(clip.data());
    return w.take();
}

FloatArray decode_clip(std::string_view bytes, const std::string& context) {
    ByteReader r(bytes, context);
    if (r.bytes(4) != "VCLP") throw FormatError(context + ": bad magic, expected VCLP");
    Shape shape(4);
    for (auto& e : shape) {
        e = r.u32();
        if (e == 0) throw FormatError(context + ": zero extent");
    }
    if (r.remaining() != shape_numel(shape) * 4) throw FormatError(context + ": payload size does not match extents");
    std::vector<float> data(shape_numel(shape));
    r.f32s(data);
    return FloatArray(std::move(shape), std::move(data));
}

void save_clip(const std::filesystem::path& path, const FloatArray& clip) { write_file_atomic(path, encode_clip(clip)); }

FloatArray load_clip(const std::filesystem::path& path) { return decode_clip(read_file(path), path.string()); }

std::string_view to_string(Split s) { return s == Split::Train ? "train" : "test"; }

std::string_view to_string(Regime r) {
    switch (r) {
        case Regime::MotionFavored: return "motion-favored";
        case Regime::CameraNoisy: return "camera-noisy";
        case Regime::Custom: return "custom";
    }
    return "?";
}

Regime parse_regime(std::string_view text) {
    if (text == "motion-favored") return Regime::MotionFavored;
    if (text == "camera-noisy") return Regime::CameraNoisy;
    if (text == "custom") return Regime::Custom;
    throw ConfigError("unknown regime '" + std::string(text) + "' (motion-favored, camera-noisy, custom)");
}

void DatasetSpec::validate() const {
    action_classes(num_classes, speed);
    if (clips_per_class < 2) throw ConfigError("data.clips_per_class must be >= 2");
    if (extent.t < 2) throw ConfigError("data.clip_t must be >= 2");
    if (extent.h < kMinFrameSize || extent.w < kMinFrameSize) throw ConfigError("data.clip_h/clip_w must be >= 16");
    if (!(speed >= 0.0)) throw ConfigError("data.speed must be >= 0");
    if (!(camera_noise_sigma >= 0.0)) throw ConfigError("data.camera_noise_sigma must be >= 0");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("data.train_fraction must lie in (0, 1)");
    const auto n_train = static_cast<std::size_t>(std::lround(train_fraction * static_cast<double>(clips_per_class)));
    if (n_train == 0 || n_train == clips_per_class) {
        throw ConfigError("data.train_fraction leaves a class with an empty train or test split");
    }
}

DatasetSpec make_regime(Regime regime, std::uint64_t seed) {
    DatasetSpec spec;
    spec.seed = seed;
    spec.regime = regime;
    switch (regime) {
        case Regime::MotionFavored:
            spec.camera_noise_sigma = 0.0;
            spec.appearance_cue = false;
            break;
        case Regime::CameraNoisy:
            spec.camera_noise_sigma = 3.0;
            spec.appearance_cue = true;
            break;
        case Regime::Custom: break;
    }
    return spec;
}

std::vector<std::size_t> DatasetManifest::indices(Split split) const {
    std::vector<std::size_t> out;
    for (const auto& c : clips)
        if (c.split == split) out.push_back(c.id);
    return out;
}

DatasetManifest build_manifest(const DatasetSpec& spec) {
    spec.validate();
    DatasetManifest m;
    m.spec = spec;
    const auto n_train = static_cast<std::size_t>(std::lround(spec.train_fraction * static_cast<double>(spec.clips_per_class)));
    auto split_rng = named_stream(spec.seed, "split");
    std::size_t id = 0;
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
        std::vector<std::size_t> order(spec.clips_per_class);
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::shuffle(order.begin(), order.end(), split_rng);
        std::vector<Split> splits(spec.clips_per_class, Split::Test);
        for (std::size_t i = 0; i < n_train; ++i) splits[order[i]] = Split::Train;
        for (std::size_t i = 0; i < spec.clips_per_class; ++i, ++id) {
            m.clips.push_back({id, static_cast<int>(c), splits[i], derive_seed(spec.seed, "clip/" + std::to_string(id))});
        }
    }
    return m;
}

std::string encode_manifest(const DatasetManifest& m) {
    const auto& s = m.spec;
    std::ostringstream os;
    os << "format = x3d-manifest-1\n";
    os << "seed = " << s.seed << "\n";
    os << "regime = " << to_string(s.regime) << "\n";
    os << "num_classes = " << s.num_classes << "\n";
    os << "clips_per_class = " << s.clips_per_class << "\n";
    os << "clip_t = " << s.extent.t << "\n";
    os << "clip_h = " << s.extent.h << "\n";
    os << "clip_w = " << s.extent.w << "\n";
    os << "speed = " << format_double(s.speed) << "\n";
    os << "camera_noise_sigma = " << format_double(s.camera_noise_sigma) << "\n";
    os << "appearance_cue = " << (s.appearance_cue ? "true" : "false") << "\n";
    os << "train_fraction = " << format_double(s.train_fraction) << "\n";
    for (const auto& c : m.clips) {
        os << "clip " << c.id << ' ' << c.class_id << ' ' << to_string(c.split) << ' ' << c.render_seed << "\n";
    }
    return os.str();
}

DatasetManifest decode_manifest(std::string_view text, const std::string& context) {
    DatasetManifest m;
    std::map<std::string, std::string, std::less<>> globals;
    std::size_t line_no = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        std::string_view line = trim(text.substr(0, nl));
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        if (line.empty() || line.front() == '#') continue;
        const std::string where = context + ":" + std::to_string(line_no);
        if (line.starts_with("clip ")) {
            std::istringstream is{std::string(line.substr(5))};
            std::string id, cls, split, seed, extra;
            if (!(is >> id >> cls >> split >> seed) || (is >> extra)) throw FormatError(where + ": malformed clip line");
            ClipRecord r;
            r.id = parse_number<std::size_t>(id, where);
            r.class_id = parse_number<int>(cls, where);
            if (split == "train") {
                r.split = Split::Train;
            } else if (split == "test") {
                r.split = Split::Test;
            } else {
                throw FormatError(where + ": unknown split '" + split + "'");
            }
            r.render_seed = parse_number<std::uint64_t>(seed, where);
            m.clips.push_back(r);
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw FormatError(where + ": expected 'key = value'");
        globals.emplace(std::string(trim(line.substr(0, eq))), std::string(trim(line.substr(eq + 1))));
    }
    auto take = [&](const char* key) -> std::string {
        auto it = globals.find(key);
        if (it == globals.end()) throw FormatError(context + ": missing key '" + key + "'");
        std::string v = it->second;
        globals.erase(it);
        return v;
    };
    if (take("format") != "x3d-manifest-1") throw FormatError(context + ": unsupported manifest format");
    auto& s = m.spec;
    s.seed = parse_number<std::uint64_t>(take("seed"), context);
    s.regime = parse_regime(take("regime"));
    s.num_classes = parse_number<std::size_t>(take("num_classes"), context);
    s.clips_per_class = parse_number<std::size_t>(take("clips_per_class"), context);
    s.extent.t = parse_number<std::size_t>(take("clip_t"), context);
    s.extent.h = parse_number<std::size_t>(take("clip_h"), context);
    s.extent.w = parse_number<std::size_t>(take("clip_w"), context);
    s.speed = parse_number<double>(take("speed"), context);
    s.camera_noise_sigma = parse_number<double>(take("camera_noise_sigma"), context);
    const std::string cue = take("appearance_cue");
    if (cue != "true" && cue != "false") throw FormatError(context + ": appearance_cue must be true or false");
    s.appearance_cue = cue == "true";
    s.train_fraction = parse_number<double>(take("train_fraction"), context);
    if (!globals.empty()) throw FormatError(context + ": unknown key '" + globals.begin()->first + "'");
    for (std::size_t i = 0; i < m.clips.size(); ++i) {
        if (m.clips[i].id != i) throw FormatError(context + ": clip ids must be 0..N-1 in order");
    }
    return m;
}

FloatArray render_manifest_clip(const DatasetManifest& manifest, const ClipRecord& record) {
    const auto& s = manifest.spec;
    const ActionClassSpec action{record.class_id, static_cast<MotionPattern>(record.class_id), s.speed};
    return render_clip(action, SceneConfig{s.camera_noise_sigma, s.appearance_cue}, s.extent, record.render_seed);
}

std::vector<std::int32_t> Dataset::labels() const {
    std::vector<std::int32_t> out;
    for (const auto& c : manifest.clips) out.push_back(c.class_id);
    return out;
}

Dataset build_dataset(const DatasetSpec& spec, const TvL1Params& flow_params) {
    Dataset d;
    d.manifest = build_manifest(spec);
    for (const auto& rec : d.manifest.clips) {
        d.rgb.push_back(render_manifest_clip(d.manifest, rec));
        d.flow.push_back(clip_to_flow_clip(d.rgb.back(), flow_params));
    }
    return d;
}

std::filesystem::path clip_path(const std::filesystem::path& dir, std::size_t id) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%06zu.vclp", id);
    return dir / "clips" / buf;
}

std::filesystem::path flow_path(const std::filesystem::path& dir, std::size_t id) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%06zu.flo3", id);
    return dir / "flow" / buf;
}

namespace {

std::string encode_flow_params(const TvL1Params& p) {
    std::ostringstream os;
    os << "lambda = " << format_double(p.lambda) << "\n";
    os << "theta = " << format_double(p.theta) << "\n";
    os << "tau = " << format_double(p.tau) << "\n";
    os << "warps_per_level = " << p.warps_per_level << "\n";
    os << "iterations_per_warp = " << p.iterations_per_warp << "\n";
    os << "pyramid_scale = " << format_double(p.pyramid_scale) << "\n";
    os << "min_level_size = " << p.min_level_size << "\n";
    os << "clip_limit = " << format_double(p.clip_limit) << "\n";
    return os.str();
}

}  // namespace

DatasetManifest generate_dataset(const DatasetSpec& spec, const std::filesystem::path& dir, bool with_flow,
                                 const TvL1Params& flow_params) {
    const auto manifest = build_manifest(spec);
    std::filesystem::create_directories(dir / "clips");
    for (const auto& rec : manifest.clips) save_clip(clip_path(dir, rec.id), render_manifest_clip(manifest, rec));
    write_file_atomic(dir / "manifest.txt", encode_manifest(manifest));
    if (with_flow) precompute_flow(dir, flow_params);
    return manifest;
}

std::size_t precompute_flow(const std::filesystem::path& dir, const TvL1Params& flow_params) {
    flow_params.validate();
    const auto manifest = decode_manifest(read_file(dir / "manifest.txt"), (dir / "manifest.txt").string());
    std::filesystem::create_directories(dir / "flow");
    for (const auto& rec : manifest.clips) {
        save_flow_clip(flow_path(dir, rec.id), clip_to_flow_clip(load_clip(clip_path(dir, rec.id)), flow_params));
    }
    write_file_atomic(dir / "flow" / "params.txt", encode_flow_params(flow_params));
    return manifest.clips.size();
}

Dataset load_dataset(const std::filesystem::path& dir, const TvL1Params& flow_params) {
    Dataset d;
    const auto manifest_path = dir / "manifest.txt";
    if (!std::filesystem::exists(manifest_path)) throw IoError("no dataset manifest at " + manifest_path.string());
    d.manifest = decode_manifest(read_file(manifest_path), manifest_path.string());
    const auto params_path = dir / "flow" / "params.txt";
    const bool cache_ok =
        std::filesystem::exists(params_path) && read_file(params_path) == encode_flow_params(flow_params);
    for (const auto& rec : d.manifest.clips) {
        d.rgb.push_back(load_clip(clip_path(dir, rec.id)));
        const auto fp = flow_path(dir, rec.id);
        if (cache_ok && std::filesystem::exists(fp)) {
            d.flow.push_back(load_flow_clip(fp));
        } else {
            d.flow.push_back(clip_to_flow_clip(d.rgb.back(), flow_params));
        }
    }
    return d;
}

}  // namespace x3d
