#include "kam/trainer.hpp"

#include <chrono>

#include "kam/digest.hpp"

namespace kam {

void Adam::step(ParamStore<float>& params, const LeafMap& leaves, const Tape<float>& tape,
                double lr) {
    if (m_.empty()) {
        for (const auto& e : params.entries) {
            size_t n = e.trainable ? e.value.numel() : 0;
            m_.emplace_back(n, 0.0);
            v_.emplace_back(n, 0.0);
        }
    }
    ++t_;
    double c1 = 1.0 - std::pow(b1_, double(t_));
    double c2 = 1.0 - std::pow(b2_, double(t_));
    for (size_t ei = 0; ei < params.entries.size(); ++ei) {
        auto& e = params.entries[ei];
        if (!e.trainable) continue;
        auto it = leaves.find(e.name);
        if (it == leaves.end())
            throw std::invalid_argument("Adam: no gradient leaf for " + e.name);
        const Tensor<float>& g = tape.grad(it->second);
        if (g.shape != e.value.shape) throw std::invalid_argument("Adam: gradient shape mismatch");
        auto& m = m_[ei];
        auto& v = v_[ei];
        for (size_t i = 0; i < g.numel(); ++i) {
            double gi = double(g.data[i]);
            m[i] = b1_ * m[i] + (1.0 - b1_) * gi;
            v[i] = b2_ * v[i] + (1.0 - b2_) * gi * gi;
            double mhat = m[i] / c1;
            double vhat = v[i] / c2;
            e.value.data[i] = float(double(e.value.data[i]) - lr * mhat / (std::sqrt(vhat) + eps_));
        }
    }
}

std::pair<Tensor<float>, std::vector<int>> Subset::gather(
    const std::vector<size_t>& positions) const {
    size_t C = set->channels(), T = set->samples();
    Tensor<float> batch({positions.size(), C, T});
    std::vector<int> labels(positions.size());
    for (size_t b = 0; b < positions.size(); ++b) {
        size_t row = idx.at(positions[b]);
        std::copy(&set->data.data[row * C * T], &set->data.data[(row + 1) * C * T],
                  &batch.data[b * C * T]);
        labels[b] = set->labels[row];
    }
    if (access_count) *access_count += positions.size();
    return {std::move(batch), std::move(labels)};
}

double evaluate(Model<float>& model, const Subset& data, size_t batch) {
    size_t correct = 0, total = 0;
    for (size_t start = 0; start < data.n(); start += batch) {
        size_t count = std::min(batch, data.n() - start);
        std::vector<size_t> pos(count);
        for (size_t i = 0; i < count; ++i) pos[i] = start + i;
        auto [x, y] = data.gather(pos);
        Tensor<float> probs = model.predict(x);
        size_t K = probs.shape[1];
        for (size_t i = 0; i < count; ++i) {
            size_t arg = 0;
            for (size_t j = 1; j < K; ++j)
                if (probs(i, j) > probs(i, arg)) arg = j;
            if (int(arg) == y[i]) ++correct;
            ++total;
        }
    }
    if (total == 0) throw std::invalid_argument("evaluate: empty subset");
    return double(correct) / double(total);
}

FoldOutcome train_fold(const Model<float>& init, const Subset& train, const Subset& val,
                       const TrainConfig& tc, size_t fold_index, uint64_t subseed) {
    tc.validate();
    if (train.n() == 0 || val.n() == 0)
        throw std::invalid_argument("train_fold: empty train or validation set");
    auto t0 = std::chrono::steady_clock::now();

    Model<float> model = init; // bit-identical start across folds
    bool is_kam = model.cfg.attention.variant == AttentionVariant::kam;
    Rng rng(subseed);
    Adam opt(tc.beta1, tc.beta2, tc.adam_eps);
    PlateauScheduler sched(tc.lr0, tc.decay, tc.patience);

    FoldOutcome out;
    out.report.fold = fold_index;
    out.report.subseed = subseed;
    out.checkpoint = model;
    double best = -1.0;

    std::vector<size_t> order(train.n());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (size_t epoch = 1; epoch <= tc.max_epochs; ++epoch) {
        double lr = sched.lr();
        rng.shuffle(order);
        double loss_sum = 0;
        size_t loss_n = 0;
        for (size_t start = 0; start < order.size(); start += tc.batch_size) {
            size_t count = std::min(tc.batch_size, order.size() - start);
            if (count < 2) break; // batch norm needs >= 2 samples
            std::vector<size_t> pos(order.begin() + long(start),
                                    order.begin() + long(start + count));
            auto [x, y] = train.gather(pos);
            Tape<float> tp;
            auto fwd = model.forward(tp, x, true, &rng);
            int loss = tp.cross_entropy(fwd.logits, y);
            tp.backward(loss);
            opt.step(model.params, fwd.leaves, tp, lr);
            loss_sum += double(tp.val(loss).data[0]) * double(count);
            loss_n += count;
        }
        double val_acc = evaluate(model, val);
        EpochStats st;
        st.epoch = epoch;
        st.train_loss = loss_n ? loss_sum / double(loss_n) : 0.0;
        st.val_acc = val_acc;
        st.lr = lr;
        if (is_kam) st.alpha = model.learned_alpha();
        out.report.history.push_back(st);
        if (val_acc > best) { // strict: earliest epoch wins ties
            best = val_acc;
            out.report.selected_epoch = epoch;
            out.report.best_val_acc = val_acc;
            out.checkpoint = model;
        }
        sched.observe(val_acc);
    }
    if (is_kam) out.report.learned_alpha = out.checkpoint.learned_alpha();
    out.report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

CvResult run_cv(const EpochSet& data, const ModelConfig& mc, const TrainConfig& tc) {
    CvResult res;
    res.plan = make_split(data, tc.seed);
    Model<float> init = Model<float>::build(mc, tc.seed);
    res.init_weights_digest = weights_digest(init);

    Subset val{&data, res.plan.validation, nullptr};
    for (size_t k = 0; k < 5; ++k) {
        std::vector<size_t> train_idx;
        for (size_t j = 0; j < 5; ++j)
            if (j != k)
                train_idx.insert(train_idx.end(), res.plan.folds[j].begin(),
                                 res.plan.folds[j].end());
        Subset train{&data, std::move(train_idx), nullptr};
        size_t test_reads = 0;
        Subset test{&data, res.plan.folds[k], &test_reads};

        uint64_t subseed = Rng::subseed(tc.seed, k);
        FoldOutcome fo = train_fold(init, train, val, tc, k, subseed);
        // selection is complete; the test subset must still be untouched
        res.test_reads_before_selection[k] = test_reads;
        fo.report.test_acc = evaluate(fo.checkpoint, test);
        res.folds.push_back(std::move(fo));
    }
    return res;
}

SummaryRow summarize(const std::string& model, size_t params, const std::vector<double>& accs) {
    SummaryRow row;
    row.model = model;
    row.params = params;
    row.n_runs = accs.size();
    if (accs.empty()) return row;
    double s = 0;
    for (double a : accs) s += a;
    row.mean_acc = s / double(accs.size());
    double v = 0;
    for (double a : accs) v += (a - row.mean_acc) * (a - row.mean_acc);
    row.std_acc = std::sqrt(v / double(accs.size()));
    return row;
}

std::string weights_digest(const Model<float>& m) {
    std::string bytes;
    for (const auto& e : m.params.entries) {
        bytes.append(e.name);
        bytes.append(reinterpret_cast<const char*>(e.value.data.data()), e.value.numel() * 4);
    }
    return sha256_hex(bytes);
}

} // namespace kam
