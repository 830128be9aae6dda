#ifndef KAM_MODEL_HPP
#define KAM_MODEL_HPP

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "kam/attention.hpp"
#include "kam/electrodes.hpp"
#include "kam/layers.hpp"
#include "kam/tape.hpp"

namespace kam {

enum class InsertionPoint { after_block1, after_block2 };

inline const char* to_string(InsertionPoint p) {
    return p == InsertionPoint::after_block1 ? "after_block1" : "after_block2";
}
inline InsertionPoint insertion_point_from(const std::string& s) {
    if (s == "after_block1") return InsertionPoint::after_block1;
    if (s == "after_block2") return InsertionPoint::after_block2;
    throw std::invalid_argument("unknown insertion point '" + s + "'");
}

/// EEGNet-style backbone configuration. The temporal/separable kernel
/// lengths and pool sizes default to the calibration that lands the
/// no-attention trainable-parameter total on 3851 for the 62x200 input.
struct ModelConfig {
    size_t n_channels = 62;
    size_t n_samples = 200; // 1 s at 200 Hz
    size_t n_classes = 3;
    size_t F1 = 8;  // temporal filters
    size_t D = 1;   // depth multiplier
    size_t F2 = 16; // pointwise filters
    size_t temporal_kernel_len = 79;
    size_t separable_kernel_len = 16;
    size_t pool1 = 2; // window (1, pool1)
    size_t pool2 = 2;
    double dropout_rate = 0.25;
    double bn_eps = 1e-5;
    double bn_momentum = 0.9;
    AttentionConfig attention;
    InsertionPoint insertion_point = InsertionPoint::after_block2;
    std::vector<std::string> electrodes; // defaults to montage order when empty

    size_t time_after_pool1() const { return (n_samples / pool1); }
    size_t time_after_pool2() const { return time_after_pool1() / pool2; }
    size_t slot_channels() const {
        return insertion_point == InsertionPoint::after_block1 ? F1 * D : F2;
    }

    void validate() const {
        auto req = [](bool ok, const char* what) {
            if (!ok) throw std::invalid_argument(std::string("ModelConfig: ") + what);
        };
        req(F1 * D == 8, "F1*D must equal 8 (eight spatial kernels)");
        req(F2 == 16, "F2 must equal 16 (insertion-point channel count)");
        req(n_channels >= 1 && n_samples >= 1, "input dims must be positive");
        req(n_classes >= 2, "need at least two classes");
        req(temporal_kernel_len >= 1 && separable_kernel_len >= 1, "kernel lengths must be positive");
        req(pool1 >= 1 && pool2 >= 1, "pool sizes must be positive");
        req(pool1 <= n_samples, "pool1 larger than time axis");
        req(time_after_pool1() >= pool2, "pool2 larger than pooled time axis");
        req(time_after_pool2() >= 1, "network collapses the time axis to zero");
        req(dropout_rate >= 0.0 && dropout_rate < 1.0, "dropout rate must be in [0,1)");
        req(electrodes.empty() || electrodes.size() == n_channels,
            "electrode list length must match n_channels");
        attention_param_count(attention, slot_channels()); // validates attention config
    }

    std::vector<std::string> electrode_names() const {
        return electrodes.empty() ? generic_electrodes(n_channels) : electrodes;
    }

    /// Trainable-parameter total; a pure function of the configuration.
    size_t param_count() const {
        size_t dense_in = F2 * time_after_pool2();
        size_t n = conv2d_param_count(F1, 1, 1, temporal_kernel_len) +
                   batchnorm_param_count(F1) + depthwise_param_count(F1, D, n_channels, 1) +
                   batchnorm_param_count(F1 * D) +
                   separable_param_count(F1 * D, 1, 1, separable_kernel_len, F2) +
                   batchnorm_param_count(F2) + dense_param_count(dense_in, n_classes, true);
        return n + attention_param_count(attention, slot_channels());
    }
};

template <class T>
struct ForwardResult {
    int input = -1;
    int logits = -1;
    int probs = -1;
    int alpha = -1; // kam only
    LeafMap leaves;
};

template <class T>
class Model {
public:
    ModelConfig cfg;
    ParamStore<T> params;
    uint64_t init_seed = 0;

    static Model build(const ModelConfig& cfg, uint64_t seed) {
        cfg.validate();
        Model m;
        m.cfg = cfg;
        m.init_seed = seed;
        Rng rng(seed);
        auto& ps = m.params;
        auto glorot = [&](Tensor<T>& t, size_t fin, size_t fout) {
            glorot_uniform(t.data, fin, fout, rng);
        };
        size_t tk = cfg.temporal_kernel_len, sk = cfg.separable_kernel_len;
        glorot(ps.add("conv1.kernel", {cfg.F1, 1, 1, tk}, true), tk, cfg.F1 * tk);
        register_batchnorm(ps, "bn1", cfg.F1);
        glorot(ps.add("dw.kernel", {cfg.F1, cfg.D, cfg.n_channels, 1}, true), cfg.n_channels,
               cfg.D * cfg.n_channels);
        register_batchnorm(ps, "bn2", cfg.F1 * cfg.D);
        glorot(ps.add("sep.depthwise", {cfg.F1 * cfg.D, 1, 1, sk}, true), sk, sk);
        glorot(ps.add("sep.pointwise", {cfg.F2, cfg.F1 * cfg.D, 1, 1}, true), cfg.F1 * cfg.D,
               cfg.F2);
        register_batchnorm(ps, "bn3", cfg.F2);
        register_attention_params(ps, cfg.attention, cfg.slot_channels(), rng);
        size_t dense_in = cfg.F2 * cfg.time_after_pool2();
        glorot(ps.add("dense.W", {dense_in, cfg.n_classes}, true), dense_in, cfg.n_classes);
        ps.add("dense.b", {cfg.n_classes}, true).fill(T(0));
        return m;
    }

    size_t param_count() const { return params.param_count(); }

    /// Reported alpha is always a + softplus(rho), never rho. Computed with
    /// the same T-precision rounding as the forward graph, so overriding
    /// alpha with this value reproduces predictions bit-exactly.
    double learned_alpha() const {
        if (cfg.attention.variant != AttentionVariant::kam)
            throw std::invalid_argument("learned_alpha: model has no KAM module");
        double rho = double(params.get("attn.rho").data[0]);
        T sp = T(rho > 0 ? rho + std::log1p(std::exp(-rho)) : std::log1p(std::exp(rho)));
        sp += T(cfg.attention.kam_a);
        return double(sp);
    }

    /// Builds the graph for a batch. x may be (N, C, T) or (N, 1, C, T).
    ForwardResult<T> forward(Tape<T>& tp, const Tensor<T>& x, bool train,
                             Rng* dropout_rng = nullptr,
                             const double* alpha_override = nullptr) {
        Tensor<T> xin = x;
        if (xin.rank() == 3) xin.shape = {xin.shape[0], 1, xin.shape[1], xin.shape[2]};
        if (xin.rank() != 4 || xin.shape[1] != 1 || xin.shape[2] != cfg.n_channels ||
            xin.shape[3] != cfg.n_samples)
            throw std::invalid_argument("forward: expected (N,1," +
                                        std::to_string(cfg.n_channels) + "," +
                                        std::to_string(cfg.n_samples) + ") input, got " +
                                        xin.shape_str());
        if (train && dropout_rng == nullptr && cfg.dropout_rate > 0.0)
            throw std::invalid_argument("forward: train mode needs a dropout rng");

        ForwardResult<T> r;
        auto& lm = r.leaves;
        r.input = tp.leaf(std::move(xin), false);
        auto P = [&](const char* name) { return plant_leaf(tp, params, lm, name); };
        auto bn = [&](int z, const char* prefix) {
            return apply_batchnorm(tp, z, params, lm, prefix, train, cfg.bn_eps,
                                   cfg.bn_momentum);
        };
        auto dropout = [&](int z) {
            if (!train || cfg.dropout_rate == 0.0) return z;
            int mask = tp.leaf(dropout_mask<T>(tp.val(z).shape, cfg.dropout_rate, *dropout_rng));
            return tp.mul(z, mask);
        };
        auto attn = [&](int z) {
            return apply_attention(tp, z, cfg.attention, params, lm, train, cfg.bn_eps,
                                   cfg.bn_momentum, alpha_override,
                                   cfg.attention.variant == AttentionVariant::kam ? &r.alpha
                                                                                  : nullptr);
        };

        int z = tp.conv2d(r.input, P("conv1.kernel"), Pad::same);
        z = bn(z, "bn1");
        z = tp.depthwise_conv2d(z, P("dw.kernel"), Pad::valid); // (N, F1*D, 1, T)
        z = bn(z, "bn2");
        z = tp.elu(z);
        if (cfg.insertion_point == InsertionPoint::after_block1) z = attn(z);
        z = tp.avg_pool(z, 1, cfg.pool1);
        z = dropout(z);
        z = tp.depthwise_conv2d(z, P("sep.depthwise"), Pad::same);
        z = tp.conv2d(z, P("sep.pointwise"), Pad::valid); // 1x1 pointwise
        z = bn(z, "bn3");
        z = tp.elu(z);
        if (cfg.insertion_point == InsertionPoint::after_block2) z = attn(z);
        z = tp.avg_pool(z, 1, cfg.pool2);
        z = dropout(z);
        z = tp.flatten2d(z);
        r.logits = tp.add_rowvec(tp.matmul(z, P("dense.W")), P("dense.b"));
        r.probs = tp.softmax_last(r.logits);
        return r;
    }

    /// Inference-mode softmax probabilities, (N, n_classes).
    Tensor<T> predict(const Tensor<T>& x, const double* alpha_override = nullptr) {
        Tape<T> tp;
        auto r = forward(tp, x, false, nullptr, alpha_override);
        return tp.val(r.probs);
    }

    /// Pre-softmax outputs f_i(x), (N, n_classes).
    Tensor<T> logits(const Tensor<T>& x, const double* alpha_override = nullptr) {
        Tape<T> tp;
        auto r = forward(tp, x, false, nullptr, alpha_override);
        return tp.val(r.logits);
    }

    /// The spatial kernels of the first depthwise layer as an
    /// (F1*D, n_channels) matrix, rows aligned to electrode order.
    Tensor<T> first_depthwise_kernels() const {
        const Tensor<T>& k = params.get("dw.kernel"); // (F1, D, Ce, 1)
        size_t F1 = k.shape[0], D = k.shape[1], Ce = k.shape[2];
        Tensor<T> out({F1 * D, Ce});
        for (size_t f = 0; f < F1; ++f)
            for (size_t d = 0; d < D; ++d)
                for (size_t c = 0; c < Ce; ++c)
                    out(f * D + d, c) = k.data[(f * D + d) * Ce + c];
        return out;
    }

    template <class U>
    Model<U> cast() const {
        Model<U> m;
        m.cfg = cfg;
        m.init_seed = init_seed;
        for (const auto& e : params.entries) {
            auto& t = m.params.add(e.name, e.value.shape, e.trainable);
            for (size_t i = 0; i < t.numel(); ++i) t.data[i] = U(e.value.data[i]);
        }
        return m;
    }

    // ---- checkpoint io: text manifest + little-endian float32 blob ----

    void save(const std::string& path) const {
        std::ostringstream hd;
        hd << "KAM-CKPT\nversion = 1\n";
        auto kv = [&](const char* k, const std::string& v) { hd << k << " = " << v << "\n"; };
        auto num = [](double v) {
            char buf[64];
            std::snprintf(buf, sizeof buf, "%.17g", v);
            return std::string(buf);
        };
        kv("n_channels", std::to_string(cfg.n_channels));
        kv("n_samples", std::to_string(cfg.n_samples));
        kv("n_classes", std::to_string(cfg.n_classes));
        kv("F1", std::to_string(cfg.F1));
        kv("D", std::to_string(cfg.D));
        kv("F2", std::to_string(cfg.F2));
        kv("temporal_kernel_len", std::to_string(cfg.temporal_kernel_len));
        kv("separable_kernel_len", std::to_string(cfg.separable_kernel_len));
        kv("pool1", std::to_string(cfg.pool1));
        kv("pool2", std::to_string(cfg.pool2));
        kv("dropout_rate", num(cfg.dropout_rate));
        kv("bn_eps", num(cfg.bn_eps));
        kv("bn_momentum", num(cfg.bn_momentum));
        kv("attention", to_string(cfg.attention.variant));
        kv("kam_a", num(cfg.attention.kam_a));
        kv("kam_heads", std::to_string(cfg.attention.kam_heads));
        kv("se_r", std::to_string(cfg.attention.se_r));
        kv("cbam_r", std::to_string(cfg.attention.cbam_r));
        kv("cbam_spatial_kernel", std::to_string(cfg.attention.cbam_spatial_kernel));
        kv("insertion_point", to_string(cfg.insertion_point));
        kv("init_seed", std::to_string(init_seed));
        {
            std::string joined;
            for (const auto& e : cfg.electrode_names()) {
                if (!joined.empty()) joined += ",";
                joined += e;
            }
            kv("electrodes", joined);
        }
        size_t offset = 0;
        for (const auto& e : params.entries) {
            hd << "tensor " << e.name << " " << (e.trainable ? 1 : 0) << " "
               << e.value.rank();
            for (size_t d : e.value.shape) hd << " " << d;
            hd << " " << offset << "\n";
            offset += e.value.numel() * 4;
        }
        hd << "blob_bytes = " << offset << "\n";
        hd << "end-header\n";

        std::string tmp = path + ".tmp";
        {
            std::ofstream os(tmp, std::ios::binary);
            if (!os) throw std::runtime_error("checkpoint: cannot write " + tmp);
            os << hd.str();
            for (const auto& e : params.entries) {
                for (size_t i = 0; i < e.value.numel(); ++i) {
                    float f = float(e.value.data[i]);
                    os.write(reinterpret_cast<const char*>(&f), 4);
                }
            }
            if (!os) throw std::runtime_error("checkpoint: write failed for " + tmp);
        }
        std::filesystem::rename(tmp, path);
    }

    static Model load(const std::string& path) {
        std::ifstream is(path, std::ios::binary);
        if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
        std::string line;
        if (!std::getline(is, line) || line != "KAM-CKPT")
            throw std::runtime_error("checkpoint: bad magic in " + path);
        Model m;
        ModelConfig& c = m.cfg;
        struct TensorDecl {
            std::string name;
            bool trainable;
            std::vector<size_t> shape;
            size_t offset;
        };
        std::vector<TensorDecl> decls;
        size_t blob_bytes = SIZE_MAX;
        while (std::getline(is, line)) {
            if (line == "end-header") break;
            std::istringstream ls(line);
            std::string key;
            ls >> key;
            if (key == "tensor") {
                TensorDecl d;
                int tr = 0;
                size_t rank = 0;
                ls >> d.name >> tr >> rank;
                d.trainable = tr != 0;
                for (size_t i = 0; i < rank; ++i) {
                    size_t dim = 0;
                    ls >> dim;
                    d.shape.push_back(dim);
                }
                ls >> d.offset;
                if (!ls) throw std::runtime_error("checkpoint: malformed tensor line");
                decls.push_back(std::move(d));
                continue;
            }
            std::string eq, val;
            ls >> eq;
            std::getline(ls, val);
            if (!val.empty() && val[0] == ' ') val.erase(0, 1);
            if (eq != "=") throw std::runtime_error("checkpoint: malformed header line: " + line);
            if (key == "version") {
                if (val != "1") throw std::runtime_error("checkpoint: unsupported version " + val);
            } else if (key == "n_channels") c.n_channels = std::stoul(val);
            else if (key == "n_samples") c.n_samples = std::stoul(val);
            else if (key == "n_classes") c.n_classes = std::stoul(val);
            else if (key == "F1") c.F1 = std::stoul(val);
            else if (key == "D") c.D = std::stoul(val);
            else if (key == "F2") c.F2 = std::stoul(val);
            else if (key == "temporal_kernel_len") c.temporal_kernel_len = std::stoul(val);
            else if (key == "separable_kernel_len") c.separable_kernel_len = std::stoul(val);
            else if (key == "pool1") c.pool1 = std::stoul(val);
            else if (key == "pool2") c.pool2 = std::stoul(val);
            else if (key == "dropout_rate") c.dropout_rate = std::stod(val);
            else if (key == "bn_eps") c.bn_eps = std::stod(val);
            else if (key == "bn_momentum") c.bn_momentum = std::stod(val);
            else if (key == "attention") c.attention.variant = attention_variant_from(val);
            else if (key == "kam_a") c.attention.kam_a = std::stod(val);
            else if (key == "kam_heads") c.attention.kam_heads = std::stoul(val);
            else if (key == "se_r") c.attention.se_r = std::stoul(val);
            else if (key == "cbam_r") c.attention.cbam_r = std::stoul(val);
            else if (key == "cbam_spatial_kernel") c.attention.cbam_spatial_kernel = std::stoul(val);
            else if (key == "insertion_point") c.insertion_point = insertion_point_from(val);
            else if (key == "init_seed") m.init_seed = std::stoull(val);
            else if (key == "blob_bytes") blob_bytes = std::stoul(val);
            else if (key == "electrodes") {
                c.electrodes.clear();
                std::istringstream es(val);
                std::string name;
                while (std::getline(es, name, ',')) c.electrodes.push_back(name);
            } else {
                throw std::runtime_error("checkpoint: unknown header key '" + key + "'");
            }
        }
        if (line != "end-header") throw std::runtime_error("checkpoint: truncated header");
        if (blob_bytes == SIZE_MAX) throw std::runtime_error("checkpoint: missing blob_bytes");
        c.validate();
        size_t expected = 0;
        for (const auto& d : decls) {
            if (d.offset != expected)
                throw std::runtime_error("checkpoint: inconsistent offset for " + d.name);
            expected += Tensor<float>::count(d.shape) * 4;
        }
        if (expected != blob_bytes)
            throw std::runtime_error("checkpoint: declared blob size inconsistent with tensors");
        std::vector<char> blob(blob_bytes);
        is.read(blob.data(), std::streamsize(blob_bytes));
        if (size_t(is.gcount()) != blob_bytes)
            throw std::runtime_error("checkpoint: truncated blob in " + path);
        for (const auto& d : decls) {
            auto& t = m.params.add(d.name, d.shape, d.trainable);
            const char* src = blob.data() + d.offset;
            for (size_t i = 0; i < t.numel(); ++i) {
                float f;
                std::memcpy(&f, src + i * 4, 4);
                t.data[i] = T(f);
            }
        }
        return m;
    }
};

} // namespace kam

#endif
