#ifndef KAM_DATASETS_HPP
#define KAM_DATASETS_HPP

#include <array>
#include <string>
#include <vector>

#include "kam/tensor.hpp"

namespace kam {

// Label encoding used everywhere, including PTC vertex order:
// 0 = positive, 1 = neutral, 2 = negative.
inline constexpr int kLabelPositive = 0;
inline constexpr int kLabelNeutral = 1;
inline constexpr int kLabelNegative = 2;
inline constexpr std::array<const char*, 3> kLabelNames = {"positive", "neutral", "negative"};

/// Labelled 1-second EEG epochs: data (N, 62, T) with T = fs * 1 s.
struct EpochSet {
    Tensor<float> data; // (N, C, T)
    std::vector<int> labels;
    std::string subject;
    size_t fs = 0; // Hz
    std::vector<std::string> electrodes;

    size_t n() const { return data.rank() == 3 ? data.shape[0] : 0; }
    size_t channels() const { return data.shape[1]; }
    size_t samples() const { return data.shape[2]; }
    void validate() const;
};

/// Fixed validation draw plus a 5-fold partition of the remainder.
/// The validation set is drawn once, before cross validation, and shared by
/// every fold.
struct SplitPlan {
    std::vector<size_t> validation;
    std::array<std::vector<size_t>, 5> folds;
    uint64_t seed = 0;
};

/// Cuts a continuous (C, L) recording into floor(L/fs) non-overlapping
/// 1-second windows; the tail remainder is discarded.
Tensor<float> epoch_signal(const Tensor<float>& continuous, size_t fs);

/// Stratified validation split (round(N/6) samples) plus stratified 5-fold
/// partition of the rest. Deterministic in seed. Requires N >= 30 and at
/// least 6 samples per class.
SplitPlan make_split(const EpochSet& epochs, uint64_t seed);

/// Synthetic 62-channel substitute for licensed data: each class carries a
/// distinct sinusoid (6 / 10 / 22 Hz) on a distinct channel subset
/// (channels 0-9 / 24-33 / 48-57) over 1/f background noise.
/// snr is the linear sinusoid-power to noise-power ratio per injected channel.
EpochSet synth_generate(size_t n_per_class, size_t fs, double snr, uint64_t seed);

/// Class frequencies and channel subsets used by synth_generate, exposed so
/// oracles can key on them.
std::array<double, 3> synth_class_freqs();
std::array<std::pair<size_t, size_t>, 3> synth_class_channels(); // [begin, end)

/// Epoch file: text header ("KAM-EPOCHS", version 1, dims, labels,
/// electrodes) followed by the raw little-endian float32 blob, row-major
/// (epoch, channel, sample). Round trips are bit-exact.
void save_epochs(const EpochSet& set, const std::string& path);
EpochSet load_epochs(const std::string& path);

/// Per-epoch, per-channel z-score, applied in place. Not part of load so
/// that save/load stays a bit-exact round trip; training pipelines call it
/// explicitly.
void zscore_epochs(EpochSet& set);

} // namespace kam

#endif
