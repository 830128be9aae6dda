#ifndef KAM_TRAINER_HPP
#define KAM_TRAINER_HPP

#include <array>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "kam/datasets.hpp"
#include "kam/model.hpp"

namespace kam {

struct TrainConfig {
    double lr0 = 1e-2;
    double decay = 0.75;
    size_t patience = 10;
    size_t max_epochs = 80;
    size_t batch_size = 64;
    double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    uint64_t seed = 0;

    void validate() const {
        if (lr0 <= 0) throw std::invalid_argument("TrainConfig: lr0 must be positive");
        if (decay <= 0 || decay >= 1) throw std::invalid_argument("TrainConfig: decay in (0,1)");
        if (patience < 1) throw std::invalid_argument("TrainConfig: patience >= 1");
        if (max_epochs < 1) throw std::invalid_argument("TrainConfig: max_epochs >= 1");
        if (batch_size < 2) throw std::invalid_argument("TrainConfig: batch_size >= 2");
    }
};

/// Multiplies lr by `factor` once the best observed value has not improved
/// in the last `patience` observations; the no-improvement counter resets on
/// each decay.
class PlateauScheduler {
public:
    PlateauScheduler(double lr0, double factor, size_t patience)
        : lr_(lr0), factor_(factor), patience_(patience) {}

    double lr() const { return lr_; }

    void observe(double val_acc) {
        if (has_best_ && val_acc > best_) {
            best_ = val_acc;
            bad_ = 0;
            return;
        }
        // the first observation only sets the baseline; it is not an
        // improvement, so a fully flat run decays exactly at `patience`
        has_best_ = true;
        best_ = std::max(best_, val_acc);
        if (++bad_ >= patience_) {
            lr_ *= factor_;
            bad_ = 0;
        }
    }

private:
    double lr_, factor_;
    size_t patience_, bad_ = 0;
    bool has_best_ = false;
    double best_ = -std::numeric_limits<double>::infinity();
};

/// Adam with bias correction. State is kept in double regardless of the
/// parameter dtype.
class Adam {
public:
    Adam(double beta1, double beta2, double eps) : b1_(beta1), b2_(beta2), eps_(eps) {}

    void step(ParamStore<float>& params, const LeafMap& leaves, const Tape<float>& tape,
              double lr);

private:
    double b1_, b2_, eps_;
    size_t t_ = 0;
    std::vector<std::vector<double>> m_, v_; // per trainable entry, lazily sized
};

/// A view of an EpochSet restricted to an index list. The optional access
/// counter is a test instrumentation hook: every sample gather bumps it.
struct Subset {
    const EpochSet* set = nullptr;
    std::vector<size_t> idx;
    size_t* access_count = nullptr;

    size_t n() const { return idx.size(); }

    /// Gathers the samples at positions [first, first+count) of idx into a
    /// (count, C, T) batch plus labels.
    std::pair<Tensor<float>, std::vector<int>> gather(const std::vector<size_t>& positions) const;
};

struct EpochStats {
    size_t epoch = 0; // 1-based
    double train_loss = 0;
    double val_acc = 0;
    double lr = 0;
    double alpha = std::numeric_limits<double>::quiet_NaN(); // kam only
};

struct FoldReport {
    size_t fold = 0;
    uint64_t subseed = 0;
    std::vector<EpochStats> history;
    size_t selected_epoch = 0; // 1-based, earliest best validation accuracy
    double best_val_acc = 0;
    double test_acc = std::numeric_limits<double>::quiet_NaN();
    double learned_alpha = std::numeric_limits<double>::quiet_NaN();
    double wall_seconds = 0;
};

struct FoldOutcome {
    FoldReport report;
    Model<float> checkpoint; // parameters at the selected epoch
};

/// Inference-mode accuracy over a subset (argmax of predict, first index on
/// ties).
double evaluate(Model<float>& model, const Subset& data, size_t batch = 128);

/// One fold of the protocol: shuffled mini-batches, cross-entropy, Adam with
/// plateau decay on validation accuracy, best-validation checkpointing.
/// Deliberately never sees test data.
FoldOutcome train_fold(const Model<float>& init, const Subset& train, const Subset& val,
                       const TrainConfig& tc, size_t fold_index, uint64_t subseed);

struct CvResult {
    SplitPlan plan;
    std::vector<FoldOutcome> folds;
    std::string init_weights_digest; // identical starting weights across folds
    std::array<size_t, 5> test_reads_before_selection{}; // hygiene probe, all zero
};

/// Five-fold CV per the protocol: one fixed validation draw, five folds over
/// the rest, every fold starting from bit-identical build(config, seed)
/// weights, per-fold subseeds for shuffling/dropout. Test accuracy is
/// computed once per fold, from the selected checkpoint, after training.
CvResult run_cv(const EpochSet& data, const ModelConfig& mc, const TrainConfig& tc);

struct SummaryRow {
    std::string model;
    size_t params = 0;
    double mean_acc = 0;
    double std_acc = 0;
    size_t n_runs = 0;
};

SummaryRow summarize(const std::string& model, size_t params, const std::vector<double>& accs);

/// Hash of the trainable+state tensors, used to compare model weights.
std::string weights_digest(const Model<float>& m);

} // namespace kam

#endif
