#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>

#include "kam/interpret.hpp"

using namespace kam;

namespace {

// One small trained KAM cross validation, shared across the test cases.
struct Fixture {
    EpochSet data;
    ModelConfig mc;
    TrainConfig tc;
    CvResult cv;

    Fixture() {
        data = synth_generate(60, 96, 25.0, 3);
        zscore_epochs(data);
        mc.n_channels = data.channels();
        mc.n_samples = data.samples();
        mc.electrodes = data.electrodes;
        mc.attention.variant = AttentionVariant::kam;
        tc.max_epochs = 4;
        tc.batch_size = 16;
        tc.seed = 9;
        cv = run_cv(data, mc, tc);
    }
};

Fixture& fx() {
    static Fixture f;
    return f;
}

// Inference pass rebuilt from tape primitives with the kernel matrix replaced
// by an explicit all-ones J, the alpha -> 0 limit.
Tensor<float> predict_with_dense_j(Model<float>& m, const Tensor<float>& x3) {
    const ModelConfig& c = m.cfg;
    Tape<float> tp;
    Tensor<float> x = x3;
    x.shape = {x3.shape[0], 1, x3.shape[1], x3.shape[2]};
    int z = tp.leaf(x);
    auto leaf = [&](const char* name) { return tp.leaf(m.params.get(name)); };
    auto bn = [&](int id, const std::string& p) {
        const auto& rm = m.params.get(p + ".running_mean");
        const auto& rv = m.params.get(p + ".running_var");
        return tp.batchnorm_infer(id, leaf((p + ".gamma").c_str()), leaf((p + ".beta").c_str()),
                                  std::vector<double>(rm.data.begin(), rm.data.end()),
                                  std::vector<double>(rv.data.begin(), rv.data.end()), c.bn_eps);
    };
    z = tp.conv2d(z, leaf("conv1.kernel"), Pad::same);
    z = bn(z, "bn1");
    z = tp.depthwise_conv2d(z, leaf("dw.kernel"), Pad::valid);
    z = bn(z, "bn2");
    z = tp.elu(z);
    z = tp.avg_pool(z, 1, c.pool1);
    z = tp.depthwise_conv2d(z, leaf("sep.depthwise"), Pad::same);
    z = tp.conv2d(z, leaf("sep.pointwise"), Pad::valid);
    z = bn(z, "bn3");
    z = tp.elu(z);
    size_t N = x.shape[0], C = c.F2, H = 1, W = c.time_after_pool1();
    Tensor<float> J({C, C});
    J.fill(1.f);
    std::vector<int> outs;
    for (size_t n = 0; n < N; ++n) {
        int xs = tp.reshape(tp.slice(z, 0, n, 1), {C, H * W});
        int ys = tp.add(xs, tp.matmul(tp.leaf(J), xs));
        outs.push_back(tp.reshape(ys, {1, C, H, W}));
    }
    z = tp.concat(outs, 0);
    z = tp.avg_pool(z, 1, c.pool2);
    z = tp.flatten2d(z);
    z = tp.add_rowvec(tp.matmul(z, leaf("dense.W")), leaf("dense.b"));
    return tp.val(tp.softmax_last(z));
}

} // namespace

TEST_CASE("default alpha grid is strictly increasing, bounded, and contains the learned value") {
    auto grid = default_alpha_grid(-0.1, 0.37);
    CHECK(grid.front() >= 1e-4);
    bool has_learned = false;
    for (size_t i = 0; i < grid.size(); ++i) {
        CHECK(grid[i] > -0.1);
        if (i) CHECK(grid[i] > grid[i - 1]);
        if (grid[i] == 0.37) has_learned = true;
    }
    CHECK(has_learned);
    CHECK(grid.back() == 1.0);
}

TEST_CASE("alpha sweep at the learned alpha reproduces the fold test accuracy exactly") {
    auto& f = fx();
    for (size_t k = 0; k < 2; ++k) {
        Model<float>& ckpt = f.cv.folds[k].checkpoint;
        Subset test{&f.data, f.cv.plan.folds[k], nullptr};
        double learned = ckpt.learned_alpha();
        AlphaSweepResult res = alpha_sweep(ckpt, test, default_alpha_grid(-0.1, learned));
        bool found = false;
        for (size_t i = 0; i < res.grid.size(); ++i)
            if (res.grid[i] == learned) {
                found = true;
                CHECK(res.acc_overall[i] == f.cv.folds[k].report.test_acc);
            }
        CHECK(found);
    }
}

TEST_CASE("alpha sweep at zero matches the dense-J substitution oracle") {
    auto& f = fx();
    Model<float>& ckpt = f.cv.folds[0].checkpoint;
    Subset test{&f.data, f.cv.plan.folds[0], nullptr};
    AlphaSweepResult res = alpha_sweep(ckpt, test, {0.0, 1.0});

    size_t correct = 0;
    std::array<size_t, 3> cc{}, ct{};
    for (size_t i : test.idx) {
        Tensor<float> one({1, 62, 96});
        std::copy(&f.data.data.data[i * 62 * 96], &f.data.data.data[(i + 1) * 62 * 96],
                  one.data.begin());
        auto p = predict_with_dense_j(ckpt, one);
        size_t arg = 0;
        for (size_t j = 1; j < 3; ++j)
            if (p(0, j) > p(0, arg)) arg = j;
        size_t lbl = size_t(f.data.labels[i]);
        ++ct[lbl];
        if (arg == lbl) {
            ++correct;
            ++cc[lbl];
        }
    }
    CHECK(res.acc_overall[0] == double(correct) / double(test.idx.size()));
    for (size_t c = 0; c < 3; ++c)
        if (ct[c]) CHECK(res.acc_per_label[0][c] == double(cc[c]) / double(ct[c]));
}

TEST_CASE("alpha sweep is pure: checkpoint untouched, reruns identical") {
    auto& f = fx();
    Model<float>& ckpt = f.cv.folds[0].checkpoint;
    Subset test{&f.data, f.cv.plan.folds[0], nullptr};
    std::string before = weights_digest(ckpt);
    AlphaSweepResult a = alpha_sweep(ckpt, test, {0.01, 0.3, 1.0});
    AlphaSweepResult b = alpha_sweep(ckpt, test, {0.01, 0.3, 1.0});
    CHECK(weights_digest(ckpt) == before);
    CHECK(a.acc_overall == b.acc_overall);
    for (size_t i = 0; i < a.grid.size(); ++i) CHECK(a.acc_per_label[i] == b.acc_per_label[i]);
    // invalid grids are rejected
    CHECK_THROWS(alpha_sweep(ckpt, test, {-0.2, 0.5}));
    CHECK_THROWS(alpha_sweep(ckpt, test, {0.5, 0.5}));
    CHECK_THROWS(alpha_sweep(ckpt, test, {}));
}

TEST_CASE("alpha sweep requires a kam checkpoint") {
    auto& f = fx();
    ModelConfig plain = f.mc;
    plain.attention.variant = AttentionVariant::none;
    auto m = Model<float>::build(plain, 1);
    Subset test{&f.data, f.cv.plan.folds[0], nullptr};
    CHECK_THROWS(alpha_sweep(m, test, {0.5}));
}

TEST_CASE("partial dependence matches central finite differences over alpha") {
    auto& f = fx();
    Model<float>& ckpt = f.cv.folds[0].checkpoint;
    size_t n = 3;
    Tensor<float> samples({n, 62, 96});
    std::copy(f.data.data.data.begin(), f.data.data.data.begin() + long(n * 62 * 96),
              samples.data.begin());
    std::vector<double> grid = {0.05, 0.4, 1.1};
    PdpResult res = partial_dependence(ckpt, samples, grid);
    REQUIRE(res.grid == grid);
    REQUIRE(res.grads.size() == grid.size());
    for (const auto& g : res.grads)
        for (const auto& per_label : g) CHECK(per_label.size() == n); // equal sample counts

    Model<double> md = ckpt.cast<double>();
    Rng pick(5);
    for (int rep = 0; rep < 5; ++rep) {
        size_t gi = pick.uniform_int(grid.size());
        size_t s = pick.uniform_int(n);
        size_t label = pick.uniform_int(3);
        Tensor<double> one({1, 62, 96});
        for (size_t i = 0; i < 62 * 96; ++i) one.data[i] = double(samples.data[s * 62 * 96 + i]);
        const double h = 1e-5;
        double ap = grid[gi] + h, am = grid[gi] - h;
        double fd = (md.logits(one, &ap)(0, label) - md.logits(one, &am)(0, label)) / (2 * h);
        double g = res.grads[gi][label][s];
        CHECK(std::fabs(g - fd) / std::max(std::fabs(fd), 1.0) < 1e-5);
    }
}

TEST_CASE("partial dependence vanishes in the identity limit") {
    auto& f = fx();
    Model<float>& ckpt = f.cv.folds[0].checkpoint;
    Tensor<float> samples({2, 62, 96});
    std::copy(f.data.data.data.begin(), f.data.data.data.begin() + long(2 * 62 * 96),
              samples.data.begin());
    PdpResult res = partial_dependence(ckpt, samples, {1e6});
    for (const auto& per_label : res.grads[0])
        for (double g : per_label) CHECK(std::fabs(g) < 1e-9);
}

TEST_CASE("prediction transition curve: endpoints, simplex, symmetry, constancy") {
    auto& f = fx();
    Model<float>& ckpt = f.cv.folds[0].checkpoint;
    size_t CT = 62 * 96;
    Tensor<float> xi({62, 96}), xj({62, 96});
    std::copy(&f.data.data.data[0], &f.data.data.data[CT], xi.data.begin());
    std::copy(&f.data.data.data[40 * CT], &f.data.data.data[41 * CT], xj.data.begin());

    PtcRecord rec = ptc(ckpt, xi, xj, 51);
    REQUIRE(rec.u.size() == 51);
    CHECK(rec.u.front() == 0.0);
    CHECK(rec.u.back() == 1.0);

    // every point lies on the probability simplex
    for (size_t s = 0; s < 51; ++s) {
        double sum = 0;
        for (size_t k = 0; k < 3; ++k) {
            CHECK(rec.probs(s, k) >= 0.f);
            sum += rec.probs(s, k);
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
    // endpoints equal direct predictions
    Tensor<float> one({1, 62, 96});
    std::copy(xi.data.begin(), xi.data.end(), one.data.begin());
    auto pi = ckpt.predict(one);
    std::copy(xj.data.begin(), xj.data.end(), one.data.begin());
    auto pj = ckpt.predict(one);
    for (size_t k = 0; k < 3; ++k) {
        CHECK(rec.probs(0, k) == doctest::Approx(double(pi(0, k))).epsilon(1e-6));
        CHECK(rec.probs(50, k) == doctest::Approx(double(pj(0, k))).epsilon(1e-6));
    }
    // swapping the endpoints reverses the curve bit-exactly
    PtcRecord rev = ptc(ckpt, xj, xi, 51);
    for (size_t s = 0; s < 51; ++s)
        for (size_t k = 0; k < 3; ++k) CHECK(rec.probs(s, k) == rev.probs(50 - s, k));
    // identical endpoints flatten the curve (approx: w1+w2 rounds off 1)
    PtcRecord flat = ptc(ckpt, xi, xi, 11);
    for (size_t s = 0; s < 11; ++s)
        for (size_t k = 0; k < 3; ++k)
            CHECK(double(flat.probs(s, k)) ==
                  doctest::Approx(double(flat.probs(0, k))).epsilon(1e-4));

    CHECK_THROWS(ptc(ckpt, xi, Tensor<float>({62, 95}), 11));
    CHECK_THROWS(ptc(ckpt, xi, xj, 1));
}

TEST_CASE("channel weight export: means, stds, and max-abs normalization") {
    auto& f = fx();
    std::vector<Model<float>> folds;
    for (auto& fo : f.cv.folds) folds.push_back(fo.checkpoint);
    ChannelWeightMap map = export_channel_weights(folds, 2);
    REQUIRE(map.electrodes.size() == 62);
    CHECK(map.electrodes == seed_electrodes());

    // raw means recompute as the hand average of the five matrices
    for (size_t e = 0; e < 62; ++e) {
        double s = 0;
        for (auto& m : folds) s += double(m.first_depthwise_kernels()(2, e));
        CHECK(map.mean[e] == doctest::Approx(s / 5.0).epsilon(1e-12));
        CHECK(map.stddev[e] >= 0.0);
    }
    // normalization: peak |mean| maps to exactly 1 in magnitude
    double peak = 0;
    for (double v : map.mean_norm) peak = std::max(peak, std::fabs(v));
    CHECK(peak == doctest::Approx(1.0).epsilon(1e-12));

    // identical checkpoints give a zero std map
    std::vector<Model<float>> same(5, folds[0]);
    ChannelWeightMap flat = export_channel_weights(same, 0);
    for (size_t e = 0; e < 62; ++e) {
        CHECK(flat.stddev[e] == 0.0);
        CHECK(flat.mean[e] == doctest::Approx(double(folds[0].first_depthwise_kernels()(0, e))));
    }

    CHECK_THROWS(export_channel_weights(folds, 8)); // kernel index out of range
    ModelConfig other = f.mc;
    other.n_channels = 60;
    other.n_samples = 96;
    other.electrodes.clear();
    std::vector<Model<float>> mixed = {folds[0], Model<float>::build(other, 1)};
    CHECK_THROWS(export_channel_weights(mixed, 0));
    CHECK_THROWS(export_channel_weights({}, 0));
}
