#include "kam/interpret.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace kam {

std::vector<double> default_alpha_grid(double a, double learned_alpha, size_t n) {
    if (n < 2) throw std::invalid_argument("alpha grid needs at least 2 points");
    double lo = std::max(a, 0.0) + 1e-4, hi = 1.0;
    std::vector<double> grid;
    for (size_t i = 0; i < n; ++i) {
        double t = double(i) / double(n - 1);
        grid.push_back(std::exp(std::log(lo) + t * (std::log(hi) - std::log(lo))));
    }
    if (learned_alpha > a) grid.push_back(learned_alpha);
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
    return grid;
}

static void check_grid(const std::vector<double>& grid, double a) {
    if (grid.empty()) throw std::invalid_argument("alpha grid is empty");
    for (size_t i = 0; i < grid.size(); ++i) {
        if (grid[i] <= a) throw std::invalid_argument("alpha grid entry outside (a, inf)");
        if (i && grid[i] <= grid[i - 1])
            throw std::invalid_argument("alpha grid must be strictly increasing");
    }
}

AlphaSweepResult alpha_sweep(const Model<float>& checkpoint, const Subset& data,
                             std::vector<double> grid) {
    if (checkpoint.cfg.attention.variant != AttentionVariant::kam)
        throw std::invalid_argument("alpha_sweep: checkpoint has no KAM module");
    if (data.n() == 0) throw std::invalid_argument("alpha_sweep: empty data");
    check_grid(grid, checkpoint.cfg.attention.kam_a);

    Model<float> m = checkpoint; // the caller's checkpoint stays untouched
    AlphaSweepResult res;
    res.grid = std::move(grid);
    res.learned_alpha = m.learned_alpha();

    const size_t batch = 128;
    for (double alpha : res.grid) {
        size_t correct = 0;
        std::array<size_t, 3> class_correct{}, class_total{};
        for (size_t start = 0; start < data.n(); start += batch) {
            size_t count = std::min(batch, data.n() - start);
            std::vector<size_t> pos(count);
            for (size_t i = 0; i < count; ++i) pos[i] = start + i;
            auto [x, y] = data.gather(pos);
            Tensor<float> probs = m.predict(x, &alpha);
            for (size_t i = 0; i < count; ++i) {
                size_t arg = 0;
                for (size_t j = 1; j < probs.shape[1]; ++j)
                    if (probs(i, j) > probs(i, arg)) arg = j;
                size_t lbl = size_t(y[i]);
                if (lbl >= 3) throw std::invalid_argument("alpha_sweep: label out of range");
                ++class_total[lbl];
                if (arg == lbl) {
                    ++correct;
                    ++class_correct[lbl];
                }
            }
        }
        res.acc_overall.push_back(double(correct) / double(data.n()));
        std::array<double, 3> rec{};
        for (size_t k = 0; k < 3; ++k)
            rec[k] = class_total[k] ? double(class_correct[k]) / double(class_total[k])
                                    : std::numeric_limits<double>::quiet_NaN();
        res.acc_per_label.push_back(rec);
    }
    return res;
}

PdpResult partial_dependence(const Model<float>& checkpoint, const Tensor<float>& samples,
                             std::vector<double> grid) {
    if (checkpoint.cfg.attention.variant != AttentionVariant::kam)
        throw std::invalid_argument("partial_dependence: checkpoint has no KAM module");
    if (samples.rank() != 3) throw std::invalid_argument("partial_dependence: want (n,C,T) input");
    check_grid(grid, checkpoint.cfg.attention.kam_a);

    Model<double> m = checkpoint.cast<double>();
    size_t n = samples.shape[0], C = samples.shape[1], Ts = samples.shape[2];
    size_t K = m.cfg.n_classes;
    if (K != 3) throw std::invalid_argument("partial_dependence: expects 3 classes");

    PdpResult res;
    res.grid = std::move(grid);
    for (double alpha : res.grid) {
        std::array<std::vector<double>, 3> g;
        for (auto& v : g) v.assign(n, 0.0);
        for (size_t s = 0; s < n; ++s) {
            Tensor<double> x({1, C, Ts});
            for (size_t i = 0; i < C * Ts; ++i) x.data[i] = double(samples.data[s * C * Ts + i]);
            Tape<double> tp;
            auto fwd = m.forward(tp, x, false, nullptr, &alpha);
            if (fwd.alpha < 0)
                throw std::logic_error("partial_dependence: alpha node missing from graph");
            for (size_t label = 0; label < K; ++label) {
                Tensor<double> cot(tp.val(fwd.logits).shape);
                cot.fill(0.0);
                cot(0, label) = 1.0;
                tp.backward(fwd.logits, cot);
                g[label][s] = tp.grad(fwd.alpha).data[0];
            }
        }
        res.grads.push_back(std::move(g));
    }
    return res;
}

PtcRecord ptc(const Model<float>& checkpoint, const Tensor<float>& xi, const Tensor<float>& xj,
              size_t n_steps) {
    if (xi.rank() != 2 || !xi.same_shape(xj))
        throw std::invalid_argument("ptc: endpoints must be (C,T) tensors of the same shape");
    if (n_steps < 2) throw std::invalid_argument("ptc: need at least 2 steps");
    size_t C = xi.shape[0], Ts = xi.shape[1];

    Model<float> m = checkpoint;
    PtcRecord rec;
    rec.probs = Tensor<float>({n_steps, m.cfg.n_classes});
    for (size_t s = 0; s < n_steps; ++s) {
        // weights formed so swapping (xi, xj) reproduces the same inputs exactly
        float w1 = float(double(n_steps - 1 - s) / double(n_steps - 1));
        float w2 = float(double(s) / double(n_steps - 1));
        rec.u.push_back(double(w2));
        Tensor<float> x({1, C, Ts});
        for (size_t i = 0; i < C * Ts; ++i) x.data[i] = w1 * xi.data[i] + w2 * xj.data[i];
        Tensor<float> p = m.predict(x);
        for (size_t k = 0; k < m.cfg.n_classes; ++k) rec.probs(s, k) = p(0, k);
    }
    return rec;
}

ChannelWeightMap export_channel_weights(const std::vector<Model<float>>& fold_checkpoints,
                                        size_t kernel_index) {
    if (fold_checkpoints.empty())
        throw std::invalid_argument("channel weights: need at least one checkpoint");
    const ModelConfig& ref = fold_checkpoints.front().cfg;
    for (const auto& m : fold_checkpoints) {
        const ModelConfig& c = m.cfg;
        if (c.n_channels != ref.n_channels || c.F1 != ref.F1 || c.D != ref.D ||
            c.electrode_names() != ref.electrode_names())
            throw std::invalid_argument("channel weights: checkpoints disagree on configuration");
    }
    if (kernel_index >= ref.F1 * ref.D)
        throw std::invalid_argument("channel weights: kernel index out of range");

    ChannelWeightMap map;
    map.kernel_index = kernel_index;
    map.electrodes = ref.electrode_names();
    for (const auto& m : fold_checkpoints) map.per_fold.push_back(m.first_depthwise_kernels());

    size_t E = ref.n_channels, F = map.per_fold.size();
    map.mean.assign(E, 0.0);
    map.stddev.assign(E, 0.0);
    for (size_t e = 0; e < E; ++e) {
        double s = 0;
        for (const auto& k : map.per_fold) s += double(k(kernel_index, e));
        map.mean[e] = s / double(F);
        double v = 0;
        for (const auto& k : map.per_fold) {
            double d = double(k(kernel_index, e)) - map.mean[e];
            v += d * d;
        }
        map.stddev[e] = std::sqrt(v / double(F));
    }
    double peak = 0;
    for (double v : map.mean) peak = std::max(peak, std::fabs(v));
    map.mean_norm.assign(E, 0.0);
    map.stddev_norm.assign(E, 0.0);
    if (peak > 0) {
        for (size_t e = 0; e < E; ++e) {
            map.mean_norm[e] = map.mean[e] / peak;
            map.stddev_norm[e] = map.stddev[e] / peak;
        }
    }
    return map;
}

} // namespace kam
