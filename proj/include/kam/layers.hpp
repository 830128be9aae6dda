#ifndef KAM_LAYERS_HPP
#define KAM_LAYERS_HPP

#include <map>
#include <string>

#include "kam/rng.hpp"
#include "kam/tape.hpp"
#include "kam/tensor.hpp"

namespace kam {

// Trainable-parameter counts are pure functions of configuration. Batch-norm
// running statistics never count.

inline size_t conv2d_param_count(size_t F, size_t Cin, size_t kh, size_t kw, bool bias = false) {
    return F * Cin * kh * kw + (bias ? F : 0);
}

inline size_t depthwise_param_count(size_t C, size_t Dm, size_t kh, size_t kw) {
    return C * Dm * kh * kw;
}

inline size_t separable_param_count(size_t C, size_t Dm, size_t kh, size_t kw, size_t F2) {
    return depthwise_param_count(C, Dm, kh, kw) + C * Dm * F2;
}

inline size_t batchnorm_param_count(size_t C) { return 2 * C; }

inline size_t dense_param_count(size_t in, size_t out, bool bias = true) {
    return in * out + (bias ? out : 0);
}

/// Named parameter tensors in a fixed registration order. Trainable entries
/// contribute to param_count; running statistics and the like do not.
template <class T>
struct ParamStore {
    struct Entry {
        std::string name;
        Tensor<T> value;
        bool trainable;
    };
    std::vector<Entry> entries;

    Tensor<T>& add(const std::string& name, std::vector<size_t> shape, bool trainable) {
        for (const auto& e : entries)
            if (e.name == name) throw std::invalid_argument("ParamStore: duplicate name " + name);
        entries.push_back(Entry{name, Tensor<T>(std::move(shape)), trainable});
        return entries.back().value;
    }

    Tensor<T>* find(const std::string& name) {
        for (auto& e : entries)
            if (e.name == name) return &e.value;
        return nullptr;
    }
    const Tensor<T>* find(const std::string& name) const {
        for (const auto& e : entries)
            if (e.name == name) return &e.value;
        return nullptr;
    }

    Tensor<T>& get(const std::string& name) {
        Tensor<T>* p = find(name);
        if (!p) throw std::invalid_argument("ParamStore: no such tensor " + name);
        return *p;
    }
    const Tensor<T>& get(const std::string& name) const {
        const Tensor<T>* p = find(name);
        if (!p) throw std::invalid_argument("ParamStore: no such tensor " + name);
        return *p;
    }

    const Entry& entry(const std::string& name) const {
        for (const auto& e : entries)
            if (e.name == name) return e;
        throw std::invalid_argument("ParamStore: no such tensor " + name);
    }

    size_t param_count() const {
        size_t n = 0;
        for (const auto& e : entries)
            if (e.trainable) n += e.value.numel();
        return n;
    }
};

/// name -> tape leaf id, filled when a forward pass plants parameter leaves.
using LeafMap = std::map<std::string, int>;

template <class T>
int plant_leaf(Tape<T>& tp, const ParamStore<T>& ps, LeafMap& lm, const std::string& name) {
    const auto& e = ps.entry(name);
    int id = tp.leaf(e.value, e.trainable);
    lm[name] = id;
    return id;
}

/// Batch norm with running-statistics bookkeeping. Running stats live in the
/// ParamStore as non-trainable tensors "<prefix>.running_mean/.running_var".
template <class T>
int apply_batchnorm(Tape<T>& tp, int x, ParamStore<T>& ps, LeafMap& lm,
                    const std::string& prefix, bool train, double eps, double momentum) {
    int g = plant_leaf(tp, ps, lm, prefix + ".gamma");
    int b = plant_leaf(tp, ps, lm, prefix + ".beta");
    Tensor<T>& rm = ps.get(prefix + ".running_mean");
    Tensor<T>& rv = ps.get(prefix + ".running_var");
    if (train) {
        std::vector<double> bm, bv;
        int y = tp.batchnorm_train(x, g, b, eps, &bm, &bv);
        for (size_t c = 0; c < rm.numel(); ++c) {
            rm.data[c] = T(momentum * double(rm.data[c]) + (1.0 - momentum) * bm[c]);
            rv.data[c] = T(momentum * double(rv.data[c]) + (1.0 - momentum) * bv[c]);
        }
        return y;
    }
    std::vector<double> m(rm.data.begin(), rm.data.end());
    std::vector<double> v(rv.data.begin(), rv.data.end());
    return tp.batchnorm_infer(x, g, b, m, v, eps);
}

template <class T>
void register_batchnorm(ParamStore<T>& ps, const std::string& prefix, size_t C) {
    ps.add(prefix + ".gamma", {C}, true).fill(T(1));
    ps.add(prefix + ".beta", {C}, true).fill(T(0));
    ps.add(prefix + ".running_mean", {C}, false).fill(T(0));
    ps.add(prefix + ".running_var", {C}, false).fill(T(1));
}

inline void glorot_uniform(std::vector<float>& data, size_t fan_in, size_t fan_out, Rng& rng) {
    double lim = std::sqrt(6.0 / double(fan_in + fan_out));
    for (auto& v : data) v = float(rng.uniform(-lim, lim));
}
inline void glorot_uniform(std::vector<double>& data, size_t fan_in, size_t fan_out, Rng& rng) {
    double lim = std::sqrt(6.0 / double(fan_in + fan_out));
    for (auto& v : data) v = rng.uniform(-lim, lim);
}

/// Inverted-scaling dropout mask: entries are 0 or 1/keep.
template <class T>
Tensor<T> dropout_mask(const std::vector<size_t>& shape, double rate, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0,1)");
    Tensor<T> mask(shape, T(1));
    if (rate == 0.0) return mask;
    T scale = T(1.0 / (1.0 - rate));
    for (auto& v : mask.data) v = rng.uniform() < rate ? T(0) : scale;
    return mask;
}

} // namespace kam

#endif
