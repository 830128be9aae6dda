#include "kam/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "kam/electrodes.hpp"
#include "kam/rng.hpp"

namespace kam {

void EpochSet::validate() const {
    if (data.rank() != 3) throw std::invalid_argument("EpochSet: data must be (N,C,T)");
    if (channels() != 62) throw std::invalid_argument("EpochSet: expected 62 channels");
    if (fs == 0 || samples() != fs)
        throw std::invalid_argument("EpochSet: T must equal fs (1-second epochs)");
    if (labels.size() != n()) throw std::invalid_argument("EpochSet: label count mismatch");
    for (int l : labels)
        if (l < 0 || l > 2) throw std::invalid_argument("EpochSet: label outside {0,1,2}");
    if (electrodes.size() != 62)
        throw std::invalid_argument("EpochSet: electrode list must have 62 names");
}

Tensor<float> epoch_signal(const Tensor<float>& continuous, size_t fs) {
    if (continuous.rank() != 2) throw std::invalid_argument("epoch_signal: input must be (C,L)");
    size_t C = continuous.shape[0], L = continuous.shape[1];
    if (fs == 0 || L < fs)
        throw std::invalid_argument("epoch_signal: recording shorter than one epoch");
    size_t n = L / fs;
    Tensor<float> out({n, C, fs});
    for (size_t e = 0; e < n; ++e)
        for (size_t c = 0; c < C; ++c)
            std::copy(&continuous.data[c * L + e * fs], &continuous.data[c * L + (e + 1) * fs],
                      &out.data[(e * C + c) * fs]);
    return out;
}

SplitPlan make_split(const EpochSet& epochs, uint64_t seed) {
    size_t N = epochs.n();
    if (N < 30) throw std::invalid_argument("make_split: need at least 30 epochs");
    std::array<std::vector<size_t>, 3> by_class;
    for (size_t i = 0; i < N; ++i) by_class[size_t(epochs.labels[i])].push_back(i);
    for (size_t c = 0; c < 3; ++c)
        if (by_class[c].size() < 6)
            throw std::invalid_argument("make_split: class " + std::string(kLabelNames[c]) +
                                        " has fewer than 6 samples");

    // validation target round(N/6), distributed per class by largest remainder
    size_t target = size_t(std::llround(double(N) / 6.0));
    std::array<size_t, 3> nv{};
    std::array<double, 3> frac{};
    size_t base_total = 0;
    for (size_t c = 0; c < 3; ++c) {
        double exact = double(by_class[c].size()) / 6.0;
        nv[c] = size_t(exact);
        frac[c] = exact - double(nv[c]);
        base_total += nv[c];
    }
    std::array<size_t, 3> order = {0, 1, 2};
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (frac[a] != frac[b]) return frac[a] > frac[b];
        return a < b;
    });
    for (size_t i = 0; base_total < target && i < 3; ++i) {
        size_t c = order[i];
        if (by_class[c].size() - nv[c] >= 6) {
            nv[c]++;
            base_total++;
        }
    }

    SplitPlan plan;
    plan.seed = seed;
    Rng rng(seed);
    size_t k = 0; // round-robin cursor carried across classes to balance folds
    for (size_t c = 0; c < 3; ++c) {
        auto idx = by_class[c];
        rng.shuffle(idx);
        if (idx.size() - nv[c] < 5)
            throw std::invalid_argument("make_split: class too small for validation + 5 folds");
        for (size_t i = 0; i < nv[c]; ++i) plan.validation.push_back(idx[i]);
        for (size_t i = nv[c]; i < idx.size(); ++i) {
            plan.folds[k % 5].push_back(idx[i]);
            ++k;
        }
    }
    std::sort(plan.validation.begin(), plan.validation.end());
    for (auto& f : plan.folds) std::sort(f.begin(), f.end());
    return plan;
}

std::array<double, 3> synth_class_freqs() { return {6.0, 10.0, 22.0}; }

std::array<std::pair<size_t, size_t>, 3> synth_class_channels() {
    return {{{0, 10}, {24, 34}, {48, 58}}};
}

namespace {

/// Paul Kellet's economy pink-noise filter; spectrum close to 1/f.
struct PinkNoise {
    double b0 = 0, b1 = 0, b2 = 0;
    double next(Rng& rng) {
        double w = rng.normal();
        b0 = 0.99765 * b0 + w * 0.0990460;
        b1 = 0.96300 * b1 + w * 0.2965164;
        b2 = 0.57000 * b2 + w * 1.0526913;
        return (b0 + b1 + b2 + w * 0.1848) * 0.25;
    }
};

} // namespace

EpochSet synth_generate(size_t n_per_class, size_t fs, double snr, uint64_t seed) {
    if (n_per_class < 1) throw std::invalid_argument("synth_generate: n_per_class must be >= 1");
    if (fs < 48) throw std::invalid_argument("synth_generate: fs must be >= 48 Hz");
    const size_t C = 62;
    EpochSet set;
    set.fs = fs;
    set.subject = "synth" + std::to_string(seed);
    set.electrodes = seed_electrodes();
    set.data = Tensor<float>({3 * n_per_class, C, fs});
    set.labels.resize(3 * n_per_class);

    auto freqs = synth_class_freqs();
    auto chans = synth_class_channels();
    Rng rng(seed);
    const double noise_std = 0.35; // empirical std of the pink filter output
    double amp = std::sqrt(2.0 * snr) * noise_std;
    size_t e = 0;
    for (size_t cls = 0; cls < 3; ++cls) {
        for (size_t k = 0; k < n_per_class; ++k, ++e) {
            set.labels[e] = int(cls);
            double phase = rng.uniform(0.0, 2.0 * M_PI);
            for (size_t c = 0; c < C; ++c) {
                PinkNoise pn;
                bool active = c >= chans[cls].first && c < chans[cls].second;
                float* row = &set.data.data[(e * C + c) * fs];
                for (size_t t = 0; t < fs; ++t) {
                    double v = pn.next(rng);
                    if (active)
                        v += amp * std::sin(2.0 * M_PI * freqs[cls] * double(t) / double(fs) +
                                            phase);
                    row[t] = float(v);
                }
            }
        }
    }
    return set;
}

void zscore_epochs(EpochSet& set) {
    size_t N = set.n(), C = set.channels(), T = set.samples();
    for (size_t e = 0; e < N; ++e)
        for (size_t c = 0; c < C; ++c) {
            float* row = &set.data.data[(e * C + c) * T];
            double m = 0;
            for (size_t t = 0; t < T; ++t) m += row[t];
            m /= double(T);
            double v = 0;
            for (size_t t = 0; t < T; ++t) {
                double d = row[t] - m;
                v += d * d;
            }
            v /= double(T);
            double inv = 1.0 / std::sqrt(v + 1e-12);
            for (size_t t = 0; t < T; ++t) row[t] = float((row[t] - m) * inv);
        }
}

void save_epochs(const EpochSet& set, const std::string& path) {
    set.validate();
    std::ostringstream hd;
    hd << "KAM-EPOCHS\nversion = 1\n";
    hd << "n = " << set.n() << "\n";
    hd << "channels = " << set.channels() << "\n";
    hd << "samples = " << set.samples() << "\n";
    hd << "fs = " << set.fs << "\n";
    hd << "subject = " << set.subject << "\n";
    hd << "labels = ";
    for (size_t i = 0; i < set.labels.size(); ++i) hd << (i ? "," : "") << set.labels[i];
    hd << "\nelectrodes = ";
    for (size_t i = 0; i < set.electrodes.size(); ++i)
        hd << (i ? "," : "") << set.electrodes[i];
    hd << "\nblob_bytes = " << set.data.numel() * 4 << "\n";
    hd << "end-header\n";

    std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw std::runtime_error("save_epochs: cannot write " + tmp);
        os << hd.str();
        os.write(reinterpret_cast<const char*>(set.data.data.data()),
                 std::streamsize(set.data.numel() * 4));
        if (!os) throw std::runtime_error("save_epochs: write failed for " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

EpochSet load_epochs(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_epochs: cannot open " + path);
    std::string line;
    if (!std::getline(is, line) || line != "KAM-EPOCHS")
        throw std::runtime_error("load_epochs: bad magic in " + path);
    EpochSet set;
    size_t N = 0, C = 0, T = 0, blob_bytes = SIZE_MAX;
    bool have_version = false;
    while (std::getline(is, line)) {
        if (line == "end-header") break;
        std::istringstream ls(line);
        std::string key, eq, val;
        ls >> key >> eq;
        std::getline(ls, val);
        if (!val.empty() && val[0] == ' ') val.erase(0, 1);
        if (eq != "=") throw std::runtime_error("load_epochs: malformed header line: " + line);
        if (key == "version") {
            if (val != "1") throw std::runtime_error("load_epochs: unsupported version " + val);
            have_version = true;
        } else if (key == "n") N = std::stoul(val);
        else if (key == "channels") C = std::stoul(val);
        else if (key == "samples") T = std::stoul(val);
        else if (key == "fs") set.fs = std::stoul(val);
        else if (key == "subject") set.subject = val;
        else if (key == "labels") {
            std::istringstream vs(val);
            std::string tok;
            while (std::getline(vs, tok, ',')) set.labels.push_back(std::stoi(tok));
        } else if (key == "electrodes") {
            std::istringstream vs(val);
            std::string tok;
            while (std::getline(vs, tok, ',')) set.electrodes.push_back(tok);
        } else if (key == "blob_bytes") blob_bytes = std::stoul(val);
        else throw std::runtime_error("load_epochs: unknown header key '" + key + "'");
    }
    if (line != "end-header") throw std::runtime_error("load_epochs: truncated header");
    if (!have_version) throw std::runtime_error("load_epochs: missing version");
    if (N == 0 || C == 0 || T == 0)
        throw std::runtime_error("load_epochs: missing or zero dimensions");
    if (blob_bytes != N * C * T * 4)
        throw std::runtime_error("load_epochs: declared blob size inconsistent with N*C*T");
    set.data = Tensor<float>({N, C, T});
    is.read(reinterpret_cast<char*>(set.data.data.data()), std::streamsize(blob_bytes));
    if (size_t(is.gcount()) != blob_bytes)
        throw std::runtime_error("load_epochs: truncated blob in " + path);
    set.validate();
    return set;
}

} // namespace kam
