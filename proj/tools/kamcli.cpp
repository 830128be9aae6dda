// Command-line front end: synthetic data generation, cross-validated
// training, benchmarking, and the analysis exports. Data artifacts are CSV
// plus a JSON run manifest; progress goes to stderr only.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "kam/digest.hpp"
#include "kam/interpret.hpp"
#include "kam/reports.hpp"
#include "kam/trainer.hpp"

using nlohmann::json;
using namespace kam;

namespace {

constexpr const char* kToolVersion = "1.0.0";

// exit codes
constexpr int kOk = 0, kUsage = 1, kData = 2, kTraining = 3;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct TrainingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

json manifest_base(const std::string& command, int argc, char** argv) {
    json m;
    m["tool"] = "kamcli";
    m["version"] = kToolVersion;
    m["command"] = command;
    std::vector<std::string> args(argv, argv + argc);
    m["argv"] = args;
    return m;
}

void write_manifest(const std::string& path, const json& m) {
    write_file_atomic(path, m.dump(2) + "\n");
}

EpochSet load_input(const std::string& path, json& manifest) {
    manifest["inputs"][path] = sha256_file(path);
    EpochSet set = load_epochs(path);
    zscore_epochs(set);
    return set;
}

Model<float> load_ckpt(const std::string& path, json& manifest) {
    manifest["inputs"][path] = sha256_file(path);
    return Model<float>::load(path);
}

ModelConfig model_config_for(const EpochSet& data, const std::string& model_name, double a) {
    ModelConfig mc;
    mc.n_channels = data.channels();
    mc.n_samples = data.samples();
    mc.electrodes = data.electrodes;
    mc.attention.variant = attention_variant_from(model_name);
    mc.attention.kam_a = a;
    mc.validate();
    return mc;
}

void echo_model_config(json& j, const ModelConfig& mc) {
    j["n_channels"] = mc.n_channels;
    j["n_samples"] = mc.n_samples;
    j["n_classes"] = mc.n_classes;
    j["F1"] = mc.F1;
    j["D"] = mc.D;
    j["F2"] = mc.F2;
    j["temporal_kernel_len"] = mc.temporal_kernel_len;
    j["separable_kernel_len"] = mc.separable_kernel_len;
    j["pool1"] = mc.pool1;
    j["pool2"] = mc.pool2;
    j["dropout_rate"] = mc.dropout_rate;
    j["bn_eps"] = mc.bn_eps;
    j["bn_momentum"] = mc.bn_momentum;
    j["attention"] = to_string(mc.attention.variant);
    j["kam_a"] = mc.attention.kam_a;
    j["insertion_point"] = to_string(mc.insertion_point);
    j["param_count"] = mc.param_count();
}

void echo_train_config(json& j, const TrainConfig& tc) {
    j["lr0"] = tc.lr0;
    j["decay"] = tc.decay;
    j["patience"] = tc.patience;
    j["max_epochs"] = tc.max_epochs;
    j["batch_size"] = tc.batch_size;
    j["seed"] = tc.seed;
}

// Runs one cross-validated training and writes its artifacts under out_dir
// with the given file prefix. Returns the fold test accuracies.
std::vector<double> run_one_cv(const EpochSet& data, const ModelConfig& mc, const TrainConfig& tc,
                               const std::string& out_dir, const std::string& prefix,
                               json& manifest) {
    CvResult cv;
    try {
        cv = run_cv(data, mc, tc);
    } catch (const std::exception& e) {
        throw TrainingError(e.what());
    }
    bool kam_model = mc.attention.variant == AttentionVariant::kam;
    std::vector<FoldCsvRow> rows;
    std::vector<double> accs;
    for (const auto& fo : cv.folds) {
        FoldCsvRow r;
        r.subject = data.subject;
        r.model = to_string(mc.attention.variant);
        r.fold = fo.report.fold;
        r.selected_epoch = fo.report.selected_epoch;
        r.val_acc = fo.report.best_val_acc;
        r.test_acc = fo.report.test_acc;
        r.learned_alpha = fo.report.learned_alpha;
        r.seed = tc.seed;
        rows.push_back(r);
        accs.push_back(fo.report.test_acc);

        std::string stem = out_dir + "/" + prefix + "fold" + std::to_string(fo.report.fold);
        write_history_csv(stem + "_history.csv", fo.report.history, kam_model);
        fo.checkpoint.save(stem + ".ckpt");
        manifest["outputs"][stem + ".ckpt"] = sha256_file(stem + ".ckpt");
    }
    write_fold_csv(out_dir + "/" + prefix + "folds.csv", rows, kam_model);
    manifest["init_weights_digest"] = cv.init_weights_digest;
    return accs;
}

int cmd_synth(size_t n_per_class, size_t fs, double snr, uint64_t seed, const std::string& out,
              int argc, char** argv) {
    if (n_per_class == 0) throw UsageError("synth: n-per-class must be positive");
    json m = manifest_base("synth", argc, argv);
    m["config"] = {{"n_per_class", n_per_class}, {"fs", fs}, {"snr", snr}, {"seed", seed}};
    EpochSet set = synth_generate(n_per_class, fs, snr, seed);
    save_epochs(set, out);
    m["outputs"][out] = sha256_file(out);
    write_manifest(out + ".manifest.json", m);
    std::cerr << "wrote " << set.n() << " epochs to " << out << "\n";
    return kOk;
}

int cmd_cv(const std::string& data_path, const std::string& model_name, double a,
           const TrainConfig& tc, const std::string& out_dir, int argc, char** argv) {
    std::filesystem::create_directories(out_dir);
    json m = manifest_base("cv", argc, argv);
    EpochSet data = load_input(data_path, m);
    ModelConfig mc = model_config_for(data, model_name, a);
    echo_model_config(m["config"], mc);
    echo_train_config(m["config"], tc);
    std::cerr << "cv: subject " << data.subject << ", model " << model_name << ", "
              << data.n() << " epochs\n";
    std::vector<double> accs = run_one_cv(data, mc, tc, out_dir, "", m);
    SummaryRow row = summarize(model_name, mc.param_count(), accs);
    write_summary_csv(out_dir + "/summary.csv", {row});
    write_manifest(out_dir + "/manifest.json", m);
    std::cerr << "cv: mean test acc " << row.mean_acc << "\n";
    return kOk;
}

int cmd_bench(const std::vector<std::string>& data_paths, std::vector<std::string> models,
              const TrainConfig& tc, const std::string& out_dir, int argc, char** argv) {
    if (models.empty()) models = {"eegnet", "qkv", "se", "cbam", "kam"};
    std::filesystem::create_directories(out_dir);
    json m = manifest_base("bench", argc, argv);
    m["config"]["models"] = models;
    echo_train_config(m["config"], tc);

    std::map<std::string, std::pair<size_t, std::vector<double>>> by_model;
    bool any_failed = false;
    for (const auto& path : data_paths) {
        EpochSet data;
        try {
            data = load_input(path, m);
        } catch (const std::exception& e) {
            std::cerr << "bench: skipping " << path << ": " << e.what() << "\n";
            m["failures"].push_back({{"input", path}, {"error", e.what()}});
            any_failed = true;
            continue;
        }
        for (const auto& name : models) {
            std::string prefix = data.subject + "_" + name + "_";
            std::cerr << "bench: " << data.subject << " x " << name << "\n";
            try {
                ModelConfig mc = model_config_for(data, name, -0.1);
                auto accs = run_one_cv(data, mc, tc, out_dir, prefix, m);
                auto& slot = by_model[name];
                slot.first = mc.param_count();
                slot.second.insert(slot.second.end(), accs.begin(), accs.end());
            } catch (const std::exception& e) {
                std::cerr << "bench: " << data.subject << " x " << name << " failed: "
                          << e.what() << "\n";
                m["failures"].push_back(
                    {{"input", path}, {"model", name}, {"error", e.what()}});
                any_failed = true;
            }
        }
    }
    std::vector<SummaryRow> rows;
    for (const auto& name : models) {
        auto it = by_model.find(name);
        if (it != by_model.end())
            rows.push_back(summarize(name, it->second.first, it->second.second));
    }
    write_summary_csv(out_dir + "/summary.csv", rows);
    write_manifest(out_dir + "/manifest.json", m);
    return any_failed ? kTraining : kOk;
}

Subset pick_subset(const EpochSet& data, int fold, uint64_t seed, SplitPlan& plan) {
    Subset s{&data, {}, nullptr};
    if (fold < 0) {
        for (size_t i = 0; i < data.n(); ++i) s.idx.push_back(i);
    } else {
        if (fold > 4) throw UsageError("fold must be in 0..4 (or -1 for the whole set)");
        plan = make_split(data, seed);
        s.idx = plan.folds[size_t(fold)];
    }
    return s;
}

int cmd_sweep(const std::string& ckpt_path, const std::string& data_path,
              std::vector<double> grid, int fold, uint64_t seed, const std::string& out,
              int argc, char** argv) {
    json m = manifest_base("sweep", argc, argv);
    Model<float> ckpt = load_ckpt(ckpt_path, m);
    EpochSet data = load_input(data_path, m);
    if (grid.empty())
        grid = default_alpha_grid(ckpt.cfg.attention.kam_a, ckpt.learned_alpha());
    SplitPlan plan;
    Subset subset = pick_subset(data, fold, seed, plan);
    m["config"] = {{"grid", grid}, {"fold", fold}, {"seed", seed}};
    AlphaSweepResult res = alpha_sweep(ckpt, subset, grid);
    write_alpha_sweep_csv(out, res);
    m["outputs"][out] = sha256_file(out);
    m["learned_alpha"] = res.learned_alpha;
    write_manifest(out + ".manifest.json", m);
    return kOk;
}

int cmd_pdp(const std::string& ckpt_path, const std::string& data_path,
            std::vector<double> grid, size_t max_samples, const std::string& out, int argc,
            char** argv) {
    json m = manifest_base("pdp", argc, argv);
    Model<float> ckpt = load_ckpt(ckpt_path, m);
    EpochSet data = load_input(data_path, m);
    if (grid.empty())
        grid = default_alpha_grid(ckpt.cfg.attention.kam_a, ckpt.learned_alpha());
    size_t n = std::min(max_samples, data.n());
    if (n == 0) throw UsageError("pdp: no samples selected");
    size_t C = data.channels(), Ts = data.samples();
    Tensor<float> samples({n, C, Ts});
    std::copy(data.data.data.begin(), data.data.data.begin() + long(n * C * Ts),
              samples.data.begin());
    m["config"] = {{"grid", grid}, {"samples", n}};
    PdpResult res = partial_dependence(ckpt, samples, grid);
    write_pdp_csv(out, res);
    m["outputs"][out] = sha256_file(out);
    write_manifest(out + ".manifest.json", m);
    return kOk;
}

int cmd_ptc(const std::string& ckpt_path, const std::string& data_path, size_t i, size_t j,
            size_t steps, const std::string& out, int argc, char** argv) {
    json m = manifest_base("ptc", argc, argv);
    Model<float> ckpt = load_ckpt(ckpt_path, m);
    EpochSet data = load_input(data_path, m);
    if (i >= data.n() || j >= data.n()) throw UsageError("ptc: epoch index out of range");
    size_t C = data.channels(), Ts = data.samples();
    auto epoch = [&](size_t idx) {
        Tensor<float> t({C, Ts});
        std::copy(&data.data.data[idx * C * Ts], &data.data.data[(idx + 1) * C * Ts],
                  t.data.begin());
        return t;
    };
    m["config"] = {{"i", i}, {"j", j}, {"steps", steps}};
    PtcRecord rec = ptc(ckpt, epoch(i), epoch(j), steps);
    write_ptc_csv(out, rec);
    m["outputs"][out] = sha256_file(out);
    write_manifest(out + ".manifest.json", m);
    return kOk;
}

int cmd_channels(const std::vector<std::string>& ckpt_paths, size_t kernel,
                 const std::string& out, int argc, char** argv) {
    json m = manifest_base("channels", argc, argv);
    std::vector<Model<float>> folds;
    for (const auto& p : ckpt_paths) folds.push_back(load_ckpt(p, m));
    m["config"] = {{"kernel", kernel}};
    ChannelWeightMap map = export_channel_weights(folds, kernel);
    write_channels_csv(out, map);
    m["outputs"][out] = sha256_file(out);
    m["normalization"] = map.normalization;
    write_manifest(out + ".manifest.json", m);
    return kOk;
}

void add_train_flags(CLI::App* cmd, TrainConfig& tc) {
    cmd->add_option("--lr0", tc.lr0, "Initial learning rate");
    cmd->add_option("--decay", tc.decay, "Plateau decay factor");
    cmd->add_option("--patience", tc.patience, "Plateau patience (epochs)");
    cmd->add_option("--max-epochs", tc.max_epochs, "Epoch cap");
    cmd->add_option("--batch-size", tc.batch_size, "Mini-batch size");
    cmd->add_option("--seed", tc.seed, "Master seed");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"EEG emotion classifier with a kernel attention module"};
    app.set_version_flag("--version", kToolVersion);
    app.set_config("--config", "", "Config file (flags override its values)");
    app.require_subcommand(1);

    // synth
    size_t sy_n = 300, sy_fs = 200;
    double sy_snr = 4.0;
    uint64_t sy_seed = 0;
    std::string sy_out;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic epoch file");
    synth->add_option("--n-per-class", sy_n, "Epochs per class");
    synth->add_option("--fs", sy_fs, "Sampling rate (Hz); epochs are 1 s");
    synth->add_option("--snr", sy_snr, "Per-channel signal-to-noise power ratio");
    synth->add_option("--seed", sy_seed, "Generator seed");
    synth->add_option("--out", sy_out, "Output epoch file")->required();

    // cv
    std::string cv_data, cv_model = "kam", cv_out;
    double cv_a = -0.1;
    TrainConfig cv_tc;
    auto* cv = app.add_subcommand("cv", "Five-fold cross-validated training");
    cv->add_option("--data", cv_data, "Epoch file")->required();
    cv->add_option("--model", cv_model, "eegnet|qkv|se|cbam|kam");
    cv->add_option("--a", cv_a, "KAM lower bound a (alpha > a)");
    cv->add_option("--out-dir", cv_out, "Output directory")->required();
    add_train_flags(cv, cv_tc);

    // bench
    std::vector<std::string> be_data, be_models;
    std::string be_out;
    TrainConfig be_tc;
    auto* bench = app.add_subcommand("bench", "Cross-validate model variants over subjects");
    bench->add_option("--data", be_data, "Epoch files, one per subject")->required();
    bench->add_option("--models", be_models, "Variants to run (default: all five)");
    bench->add_option("--out-dir", be_out, "Output directory")->required();
    add_train_flags(bench, be_tc);

    // sweep
    std::string sw_ckpt, sw_data, sw_out;
    std::vector<double> sw_grid;
    int sw_fold = -1;
    uint64_t sw_seed = 0;
    auto* sweep = app.add_subcommand("sweep", "Accuracy as a function of overridden alpha");
    sweep->add_option("--checkpoint", sw_ckpt, "KAM checkpoint")->required();
    sweep->add_option("--data", sw_data, "Epoch file")->required();
    sweep->add_option("--grid", sw_grid, "Alpha grid (default: log grid plus learned alpha)");
    sweep->add_option("--fold", sw_fold, "Evaluate on this test fold (-1: whole file)");
    sweep->add_option("--seed", sw_seed, "Split seed used when --fold is set");
    sweep->add_option("--out", sw_out, "Output CSV")->required();

    // pdp
    std::string pd_ckpt, pd_data, pd_out;
    std::vector<double> pd_grid;
    size_t pd_samples = 16;
    auto* pdp = app.add_subcommand("pdp", "d f_i / d alpha distributions over an alpha grid");
    pdp->add_option("--checkpoint", pd_ckpt, "KAM checkpoint")->required();
    pdp->add_option("--data", pd_data, "Epoch file")->required();
    pdp->add_option("--grid", pd_grid, "Alpha grid (default: log grid plus learned alpha)");
    pdp->add_option("--samples", pd_samples, "Number of leading epochs to analyze");
    pdp->add_option("--out", pd_out, "Output CSV")->required();

    // ptc
    std::string pt_ckpt, pt_data, pt_out;
    size_t pt_i = 0, pt_j = 1, pt_steps = 51;
    auto* ptc_cmd = app.add_subcommand("ptc", "Prediction transition curve between two epochs");
    ptc_cmd->add_option("--checkpoint", pt_ckpt, "Checkpoint")->required();
    ptc_cmd->add_option("--data", pt_data, "Epoch file")->required();
    ptc_cmd->add_option("--i", pt_i, "First epoch index");
    ptc_cmd->add_option("--j", pt_j, "Second epoch index");
    ptc_cmd->add_option("--steps", pt_steps, "Interpolation steps (including endpoints)");
    ptc_cmd->add_option("--out", pt_out, "Output CSV")->required();

    // channels
    std::vector<std::string> ch_ckpts;
    size_t ch_kernel = 0;
    std::string ch_out;
    auto* channels = app.add_subcommand("channels", "Spatial kernel weights per electrode");
    channels->add_option("--checkpoints", ch_ckpts, "Fold checkpoints")->required();
    channels->add_option("--kernel", ch_kernel, "Depthwise kernel index");
    channels->add_option("--out", ch_out, "Output CSV")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }

    try {
        if (*synth) return cmd_synth(sy_n, sy_fs, sy_snr, sy_seed, sy_out, argc, argv);
        if (*cv) return cmd_cv(cv_data, cv_model, cv_a, cv_tc, cv_out, argc, argv);
        if (*bench) return cmd_bench(be_data, be_models, be_tc, be_out, argc, argv);
        if (*sweep)
            return cmd_sweep(sw_ckpt, sw_data, sw_grid, sw_fold, sw_seed, sw_out, argc, argv);
        if (*pdp) return cmd_pdp(pd_ckpt, pd_data, pd_grid, pd_samples, pd_out, argc, argv);
        if (*ptc_cmd) return cmd_ptc(pt_ckpt, pt_data, pt_i, pt_j, pt_steps, pt_out, argc, argv);
        if (*channels) return cmd_channels(ch_ckpts, ch_kernel, ch_out, argc, argv);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const TrainingError& e) {
        std::cerr << "training failed: " << e.what() << "\n";
        return kTraining;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kData;
    }
    return kUsage;
}
