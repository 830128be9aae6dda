#ifndef KAM_INTERPRET_HPP
#define KAM_INTERPRET_HPP

#include <array>
#include <string>
#include <vector>

#include "kam/trainer.hpp"

namespace kam {

struct AlphaSweepResult {
    std::vector<double> grid; // strictly increasing
    std::vector<double> acc_overall;
    std::vector<std::array<double, 3>> acc_per_label; // per-class recall
    double learned_alpha = 0;
};

struct PdpResult {
    std::vector<double> grid;
    // grads[g][label][sample] = d f_label / d alpha at grid[g]
    std::vector<std::array<std::vector<double>, 3>> grads;
};

struct PtcRecord {
    std::vector<double> u; // includes 0 and 1
    Tensor<float> probs;   // (n_steps, 3), rows on the simplex
};

struct ChannelWeightMap {
    size_t kernel_index = 0;
    std::vector<Tensor<float>> per_fold; // (8, 62) each
    std::vector<std::string> electrodes;
    std::vector<double> mean, stddev;           // across folds, per electrode
    std::vector<double> mean_norm, stddev_norm; // divided by max absolute value
    std::string normalization = "max-abs";
};

/// Log-like grid over [max(a,0)+1e-4, 1.0] plus the learned alpha.
std::vector<double> default_alpha_grid(double a, double learned_alpha, size_t n = 16);

/// Accuracy (overall and per-class recall) with alpha overridden at each
/// grid point, all other parameters frozen. Pure: the checkpoint is not
/// mutated. Requires a KAM checkpoint and a grid inside (a, inf).
AlphaSweepResult alpha_sweep(const Model<float>& checkpoint, const Subset& data,
                             std::vector<double> grid);

/// Reverse-mode d f_i / d alpha at each (sample, grid alpha), differentiated
/// with respect to alpha itself (not rho). Evaluated in float64.
PdpResult partial_dependence(const Model<float>& checkpoint,
                             const Tensor<float>& samples, // (n, C, T)
                             std::vector<double> grid);

/// Prediction transition curve: predictions along the linear morph
/// (1-u) x_i + u x_j for u on a uniform n_steps grid.
PtcRecord ptc(const Model<float>& checkpoint, const Tensor<float>& xi, const Tensor<float>& xj,
              size_t n_steps = 51);

/// First-depthwise kernel weights across fold checkpoints: per-electrode
/// mean and standard deviation for the selected kernel, raw and max-abs
/// normalized.
ChannelWeightMap export_channel_weights(const std::vector<Model<float>>& fold_checkpoints,
                                        size_t kernel_index);

} // namespace kam

#endif
