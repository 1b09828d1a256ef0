#include <doctest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "test_util.hpp"
#include "x3d/binary_io.hpp"
#include "x3d/error.hpp"
#include "x3d/ops.hpp"
#include "x3d/optim.hpp"
#include "x3d/synth_data.hpp"

using namespace x3d;

namespace {

// Soft foreground mask of one frame from luma, relative to the known colours.
std::array<double, 2> alpha_centroid(const FloatArray& clip, std::size_t t, const RenderTrace& trace) {
    const std::size_t T = clip.shape()[1], H = clip.shape()[2], W = clip.shape()[3];
    auto luma = [](const std::array<float, 3>& c) { return 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]; };
    const double lb = luma(trace.background), lf = luma(trace.foreground);
    double sx = 0, sy = 0, sw = 0;
    for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) {
            double l = 0;
            const double wts[3] = {0.299, 0.587, 0.114};
            for (std::size_t c = 0; c < 3; ++c) l += wts[c] * clip.data()[((c * T + t) * H + y) * W + x];
            // Texture amplitude is small compared with the fg/bg gap; clip it off.
            double a = (l - lb) / (lf - lb);
            a = a < 0.15 ? 0.0 : std::min(a, 1.0);
            sx += a * (x + 0.5);
            sy += a * (y + 0.5);
            sw += a;
        }
    }
    return {sx / sw, sy / sw};
}

double max_abs_diff(const FloatArray& a, const FloatArray& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
    return m;
}

}  // namespace

TEST_CASE("action classes map class i to pattern i") {
    const auto classes = action_classes(8, 2.0);
    REQUIRE(classes.size() == 8);
    std::set<MotionPattern> seen;
    for (std::size_t i = 0; i < classes.size(); ++i) {
        CHECK(classes[i].class_id == int(i));
        seen.insert(classes[i].pattern);
    }
    CHECK(seen.size() == 8);
    CHECK_THROWS_AS(action_classes(9, 2.0), ConfigError);
    CHECK_THROWS_AS(action_classes(1, 2.0), ConfigError);
}

TEST_CASE("translate-right moves the shape centroid +2 px per frame") {
    ActionClassSpec right{1, MotionPattern::TranslateRight, 2.0};
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        RenderTrace trace;
        const auto clip = render_clip(right, SceneConfig{}, ClipExtent{}, seed, &trace);
        CHECK(clip.shape() == Shape{3, 8, 32, 32});
        for (std::size_t t = 1; t < 8; ++t) {
            CHECK(trace.centers[t][0] - trace.centers[t - 1][0] == doctest::Approx(2.0));
            CHECK(trace.centers[t][1] == doctest::Approx(trace.centers[0][1]));
            const auto c0 = alpha_centroid(clip, t - 1, trace);
            const auto c1 = alpha_centroid(clip, t, trace);
            INFO("seed " << seed << " frame " << t);
            CHECK(c1[0] - c0[0] == doctest::Approx(2.0).epsilon(0.1));
            CHECK(std::abs(c1[1] - c0[1]) < 0.2);
        }
    }
}

TEST_CASE("trajectories follow their pattern") {
    const ClipExtent ext{};
    auto centers = [&](MotionPattern p) {
        RenderTrace tr;
        render_clip({0, p, 2.0}, SceneConfig{}, ext, 11, &tr);
        return tr;
    };
    CHECK(centers(MotionPattern::TranslateLeft).centers[7][0] < centers(MotionPattern::TranslateLeft).centers[0][0]);
    CHECK(centers(MotionPattern::TranslateUp).centers[7][1] < centers(MotionPattern::TranslateUp).centers[0][1]);
    CHECK(centers(MotionPattern::TranslateDown).centers[7][1] > centers(MotionPattern::TranslateDown).centers[0][1]);
    const auto ex = centers(MotionPattern::Expand);
    const auto co = centers(MotionPattern::Contract);
    for (std::size_t t = 1; t < 8; ++t) {
        CHECK(ex.radii[t] > ex.radii[t - 1]);
        CHECK(co.radii[t] < co.radii[t - 1]);
    }
    // Orbits: constant distance to a fixed centre, opposite angular direction.
    for (auto p : {MotionPattern::OrbitCw, MotionPattern::OrbitCcw}) {
        const auto tr = centers(p);
        double cross_sum = 0;
        for (std::size_t t = 2; t < 8; ++t) {
            const double ax = tr.centers[t - 1][0] - tr.centers[t - 2][0], ay = tr.centers[t - 1][1] - tr.centers[t - 2][1];
            const double bx = tr.centers[t][0] - tr.centers[t - 1][0], by = tr.centers[t][1] - tr.centers[t - 1][1];
            cross_sum += ax * by - ay * bx;
            CHECK(std::hypot(bx, by) == doctest::Approx(std::hypot(ax, ay)).epsilon(1e-6));
        }
        // Positive cross product turns clockwise on a y-down screen.
        if (p == MotionPattern::OrbitCw) CHECK(cross_sum > 0);
        else CHECK(cross_sum < 0);
    }
}

TEST_CASE("rendering is a pure function of its inputs") {
    const ActionClassSpec a{4, MotionPattern::OrbitCw, 2.0};
    const SceneConfig noisy{3.0, true};
    const auto c1 = render_clip(a, noisy, ClipExtent{}, 77);
    const auto c2 = render_clip(a, noisy, ClipExtent{}, 77);
    CHECK(c1 == c2);
    CHECK_FALSE(c1 == render_clip(a, noisy, ClipExtent{}, 78));
    for (float v : c1.data()) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
}

TEST_CASE("zero speed and zero camera noise give a static clip with zero flow") {
    for (auto p : {MotionPattern::TranslateRight, MotionPattern::OrbitCcw, MotionPattern::Expand}) {
        const auto clip = render_clip({0, p, 0.0}, SceneConfig{}, ClipExtent{}, 5);
        const std::size_t frame = 3 * 32 * 32 / 3;
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t t = 1; t < 8; ++t)
                for (std::size_t i = 0; i < frame; ++i)
                    REQUIRE(clip.data()[(c * 8 + t) * frame + i] == clip.data()[(c * 8) * frame + i]);
        const auto flow = clip_to_flow_clip(clip, TvL1Params{});
        double m = 0;
        for (float v : flow.data()) m = std::max(m, double(std::abs(v)));
        CHECK(m < 1e-6);
    }
}

TEST_CASE("camera steps are rounded Gaussian draws") {
    const auto steps = sample_camera_steps(3.0, 1000, 2024);
    double s1 = 0, s2 = 0;
    for (const auto& s : steps)
        for (int v : s) {
            s1 += v;
            s2 += double(v) * v;
        }
    const double n = 2000.0, mean = s1 / n, sd = std::sqrt(s2 / n - mean * mean);
    CHECK(std::abs(mean) < 0.3);
    // Rounding adds variance 1/12, well inside the tolerance.
    CHECK(sd == doctest::Approx(3.0).epsilon(0.2));
    for (const auto& s : sample_camera_steps(0.0, 50, 1)) CHECK(s == std::array<int, 2>{0, 0});
}

TEST_CASE("camera offsets are a random walk starting at zero and shift the whole frame") {
    const ActionClassSpec a{0, MotionPattern::TranslateLeft, 0.0};
    RenderTrace still_trace, noisy_trace;
    const auto still = render_clip(a, SceneConfig{0.0, false}, ClipExtent{}, 9, &still_trace);
    const auto noisy = render_clip(a, SceneConfig{3.0, false}, ClipExtent{}, 9, &noisy_trace);
    REQUIRE(noisy_trace.camera_offsets.size() == 8);
    CHECK(noisy_trace.camera_offsets[0] == std::array<int, 2>{0, 0});
    const auto steps = sample_camera_steps(3.0, 7, derive_seed(9, "camera"));
    for (std::size_t t = 1; t < 8; ++t) {
        CHECK(noisy_trace.camera_offsets[t][0] == noisy_trace.camera_offsets[t - 1][0] + steps[t - 1][0]);
        CHECK(noisy_trace.camera_offsets[t][1] == noisy_trace.camera_offsets[t - 1][1] + steps[t - 1][1]);
    }
    // Every noisy frame is the still frame rolled by the offset.
    for (std::size_t t = 0; t < 8; ++t) {
        const long ox = noisy_trace.camera_offsets[t][0], oy = noisy_trace.camera_offsets[t][1];
        for (std::size_t c = 0; c < 3; ++c)
            for (long y = 0; y < 32; ++y)
                for (long x = 0; x < 32; ++x) {
                    const long sy = ((y - oy) % 32 + 32) % 32, sx = ((x - ox) % 32 + 32) % 32;
                    REQUIRE(noisy.data()[((c * 8 + t) * 32 + y) * 32 + x] ==
                            still.data()[((c * 8 + t) * 32 + sy) * 32 + sx]);
                }
    }
}

TEST_CASE("appearance cue changes colours only") {
    const ActionClassSpec a{3, MotionPattern::TranslateDown, 2.0};
    for (std::uint64_t seed = 21; seed < 29; ++seed) {
        CAPTURE(seed);
        RenderTrace off, on;
        const auto c_off = render_clip(a, SceneConfig{0.0, false}, ClipExtent{}, seed, &off);
        const auto c_on = render_clip(a, SceneConfig{0.0, true}, ClipExtent{}, seed, &on);
        CHECK(on.foreground == class_color(3));
        CHECK(on.background == off.background);
        CHECK(on.centers == off.centers);
        CHECK(on.radii == off.radii);
        CHECK(on.shape == off.shape);
        // Pixels fully covered by background are identical.
        const std::size_t n = 8 * 32 * 32;
        std::size_t same = 0;
        for (std::size_t i = 0; i < c_on.size(); ++i) same += c_on[i] == c_off[i];
        CHECK(same > n);  // most of the 3n samples are background
        CHECK_FALSE(c_on == c_off);
    }
}

TEST_CASE("frames smaller than 16 px are rejected") {
    CHECK_THROWS_AS(render_clip({}, SceneConfig{}, ClipExtent{8, 15, 32}, 1), ShapeError);
    CHECK_THROWS_AS(render_clip({}, SceneConfig{}, ClipExtent{8, 32, 8}, 1), ShapeError);
}

TEST_CASE("regimes set camera noise and appearance cue") {
    const auto mf = make_regime(Regime::MotionFavored, 1);
    CHECK(mf.camera_noise_sigma == 0.0);
    CHECK_FALSE(mf.appearance_cue);
    const auto cn = make_regime(Regime::CameraNoisy, 1);
    CHECK(cn.camera_noise_sigma == 3.0);
    CHECK(cn.appearance_cue);
    CHECK(parse_regime("camera-noisy") == Regime::CameraNoisy);
    CHECK(parse_regime(to_string(Regime::MotionFavored)) == Regime::MotionFavored);
    CHECK_THROWS_AS(parse_regime("noisy"), ConfigError);
}

TEST_CASE("default manifest has 160 clips split 128/32, stratified and disjoint") {
    const auto m = build_manifest(make_regime(Regime::MotionFavored, 3));
    REQUIRE(m.clips.size() == 160);
    const auto train = m.indices(Split::Train), test = m.indices(Split::Test);
    CHECK(train.size() == 128);
    CHECK(test.size() == 32);
    std::vector<int> per_class_train(8), per_class_test(8);
    for (auto i : train) ++per_class_train[m.clips[i].class_id];
    for (auto i : test) ++per_class_test[m.clips[i].class_id];
    for (int c = 0; c < 8; ++c) {
        CHECK(per_class_train[c] == 16);
        CHECK(per_class_test[c] == 4);
    }
    std::set<std::uint64_t> seeds;
    for (const auto& c : m.clips) seeds.insert(c.render_seed);
    CHECK(seeds.size() == 160);
    CHECK(build_manifest(make_regime(Regime::MotionFavored, 3)) == m);
    CHECK_FALSE(build_manifest(make_regime(Regime::MotionFavored, 4)).clips == m.clips);
}

TEST_CASE("dataset spec validation") {
    auto s = make_regime(Regime::MotionFavored);
    s.num_classes = 9;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = make_regime(Regime::MotionFavored);
    s.train_fraction = 1.0;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = make_regime(Regime::MotionFavored);
    s.extent.w = 12;
    CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("manifest round trip") {
    auto spec = make_regime(Regime::CameraNoisy, 0xfeedface12345ULL);
    spec.speed = 1.75;
    spec.train_fraction = 0.75;
    const auto m = build_manifest(spec);
    const auto text = encode_manifest(m);
    const auto back = decode_manifest(text);
    CHECK(back == m);
    CHECK(encode_manifest(back) == text);
    CHECK_THROWS_AS(decode_manifest(text + "bogus = 1\n"), FormatError);
    CHECK_THROWS_AS(decode_manifest(text + "clip 160 0 valid 1\n"), FormatError);
    CHECK_THROWS_AS(decode_manifest("format = x3d-manifest-1\n"), FormatError);
}

TEST_CASE("clip file round trip is byte exact") {
    const auto clip = render_clip({2, MotionPattern::TranslateUp, 2.0}, SceneConfig{3.0, true}, ClipExtent{4, 16, 20}, 8);
    const auto bytes = encode_clip(clip);
    CHECK(bytes.size() == 4 + 16 + clip.size() * 4);
    CHECK(bytes.substr(0, 4) == "VCLP");
    const auto back = decode_clip(bytes);
    CHECK(back == clip);
    CHECK(encode_clip(back) == bytes);
    CHECK_THROWS_AS(decode_clip(bytes.substr(0, bytes.size() - 1)), FormatError);
    CHECK_THROWS_AS(decode_clip("XCLP" + bytes.substr(4)), FormatError);
}

TEST_CASE("generate, precompute and load a dataset directory") {
    const auto dir = x3d::testing::scratch_dir("synth_dataset");
    DatasetSpec spec = make_regime(Regime::MotionFavored, 5);
    spec.num_classes = 2;
    spec.clips_per_class = 5;
    spec.extent = {3, 16, 16};
    const TvL1Params flow{};
    const auto m = generate_dataset(spec, dir, false);
    CHECK(m.clips.size() == 10);
    CHECK(std::filesystem::exists(clip_path(dir, 9)));
    CHECK_FALSE(std::filesystem::exists(flow_path(dir, 0)));
    CHECK(precompute_flow(dir, flow) == 10);
    const auto loaded = load_dataset(dir, flow);
    const auto direct = build_dataset(spec, flow);
    CHECK(loaded.manifest == direct.manifest);
    for (std::size_t i = 0; i < 10; ++i) {
        CHECK(loaded.rgb[i] == direct.rgb[i]);
        CHECK(loaded.flow[i] == direct.flow[i]);
    }
    // Cached flow is ignored when the parameters differ.
    TvL1Params other = flow;
    other.warps_per_level = 1;
    const auto recomputed = load_dataset(dir, other);
    CHECK(recomputed.flow[0] == clip_to_flow_clip(direct.rgb[0], other));
    CHECK_THROWS_AS(load_dataset(dir / "missing", flow), IoError);
}

TEST_CASE("a single frame carries no usable label cue in the motion-favored regime") {
    // Linear softmax classifier on middle frames; held-out accuracy stays near chance.
    const auto m = build_manifest(make_regime(Regime::MotionFavored, 12));
    const std::size_t D = 3 * 32 * 32;
    auto middle_frames = [&](Split split, std::vector<std::int32_t>& labels) {
        const auto idx = m.indices(split);
        FloatArray x({idx.size(), D});
        for (std::size_t n = 0; n < idx.size(); ++n) {
            const auto clip = render_manifest_clip(m, m.clips[idx[n]]);
            for (std::size_t c = 0; c < 3; ++c)
                for (std::size_t p = 0; p < 32 * 32; ++p)
                    x[n * D + c * 1024 + p] = clip[(c * 8 + 4) * 1024 + p] - 0.5f;
            labels.push_back(m.clips[idx[n]].class_id);
        }
        return x;
    };
    std::vector<std::int32_t> ytr, yte;
    const auto xtr = middle_frames(Split::Train, ytr);
    const auto xte = middle_frames(Split::Test, yte);

    std::vector<Parameter> params{{"w", Tensor::leaf(FloatArray({8, D}), true)},
                                  {"b", Tensor::leaf(FloatArray({8}), true)}};
    Sgd sgd({0.01f, 0.9f, 0.0f});
    const auto input = Tensor::leaf(xtr);
    double train_acc = 0;
    for (int step = 0; step < 300; ++step) {
        zero_grad(params);
        auto ce = softmax_cross_entropy(linear(input, params[0].tensor, params[1].tensor), ytr);
        ce.loss.backward();
        sgd.step(params);
        if (step == 299) {
            std::size_t hits = 0;
            for (std::size_t n = 0; n < ytr.size(); ++n) {
                const float* row = &ce.probabilities[n * 8];
                hits += std::max_element(row, row + 8) - row == ytr[n];
            }
            train_acc = double(hits) / double(ytr.size());
        }
    }
    const auto logits = linear(Tensor::leaf(xte), params[0].tensor, params[1].tensor).value();
    std::size_t hits = 0;
    for (std::size_t n = 0; n < yte.size(); ++n) {
        const float* row = &logits[n * 8];
        hits += std::max_element(row, row + 8) - row == yte[n];
    }
    const double test_acc = double(hits) / double(yte.size());
    INFO("train acc " << train_acc << " test acc " << test_acc);
    CHECK(train_acc > 0.5);  // the classifier did fit its training set
    CHECK(test_acc < 0.25);
}
