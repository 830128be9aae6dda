#include "kam/reports.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "kam/datasets.hpp"

namespace kam {

std::string fmt_num(double v) {
    char buf[64];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

void write_file_atomic(const std::string& path, const std::string& contents) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw std::runtime_error("cannot write " + tmp);
        os << contents;
        if (!os) throw std::runtime_error("write failed for " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

void write_fold_csv(const std::string& path, const std::vector<FoldCsvRow>& rows,
                    bool with_alpha) {
    std::ostringstream os;
    os << "subject,model,fold,selected_epoch,val_acc,test_acc";
    if (with_alpha) os << ",learned_alpha";
    os << ",seed\n";
    for (const auto& r : rows) {
        os << r.subject << "," << r.model << "," << r.fold << "," << r.selected_epoch << ","
           << fmt_num(r.val_acc) << "," << fmt_num(r.test_acc);
        if (with_alpha) os << "," << fmt_num(r.learned_alpha);
        os << "," << r.seed << "\n";
    }
    write_file_atomic(path, os.str());
}

void write_history_csv(const std::string& path, const std::vector<EpochStats>& history,
                       bool with_alpha) {
    std::ostringstream os;
    os << "epoch,train_loss,val_acc,lr";
    if (with_alpha) os << ",alpha";
    os << "\n";
    for (const auto& st : history) {
        os << st.epoch << "," << fmt_num(st.train_loss) << "," << fmt_num(st.val_acc) << ","
           << fmt_num(st.lr);
        if (with_alpha) os << "," << fmt_num(st.alpha);
        os << "\n";
    }
    write_file_atomic(path, os.str());
}

void write_summary_csv(const std::string& path, const std::vector<SummaryRow>& rows) {
    std::ostringstream os;
    os << "model,param_count,mean_acc,std_acc,n_runs\n";
    for (const auto& r : rows)
        os << r.model << "," << r.params << "," << fmt_num(r.mean_acc) << ","
           << fmt_num(r.std_acc) << "," << r.n_runs << "\n";
    write_file_atomic(path, os.str());
}

void write_alpha_sweep_csv(const std::string& path, const AlphaSweepResult& res) {
    std::ostringstream os;
    os << "alpha,acc_overall,acc_pos,acc_neu,acc_neg\n";
    for (size_t i = 0; i < res.grid.size(); ++i) {
        const auto& pc = res.acc_per_label[i];
        os << fmt_num(res.grid[i]) << "," << fmt_num(res.acc_overall[i]) << ","
           << fmt_num(pc[kLabelPositive]) << "," << fmt_num(pc[kLabelNeutral]) << ","
           << fmt_num(pc[kLabelNegative]) << "\n";
    }
    write_file_atomic(path, os.str());
}

void write_pdp_csv(const std::string& path, const PdpResult& res) {
    std::ostringstream os;
    os << "alpha,label,sample,dfdalpha\n";
    for (size_t g = 0; g < res.grid.size(); ++g)
        for (size_t label = 0; label < 3; ++label)
            for (size_t s = 0; s < res.grads[g][label].size(); ++s)
                os << fmt_num(res.grid[g]) << "," << kLabelNames[label] << "," << s << ","
                   << fmt_num(res.grads[g][label][s]) << "\n";
    write_file_atomic(path, os.str());
}

void write_ptc_csv(const std::string& path, const PtcRecord& rec) {
    std::ostringstream os;
    os << "u,p_pos,p_neu,p_neg\n";
    for (size_t s = 0; s < rec.u.size(); ++s)
        os << fmt_num(rec.u[s]) << "," << fmt_num(double(rec.probs(s, kLabelPositive))) << ","
           << fmt_num(double(rec.probs(s, kLabelNeutral))) << ","
           << fmt_num(double(rec.probs(s, kLabelNegative))) << "\n";
    write_file_atomic(path, os.str());
}

void write_channels_csv(const std::string& path, const ChannelWeightMap& map) {
    std::ostringstream os;
    os << "electrode,mean,std,mean_normalized,std_normalized\n";
    for (size_t e = 0; e < map.electrodes.size(); ++e)
        os << map.electrodes[e] << "," << fmt_num(map.mean[e]) << "," << fmt_num(map.stddev[e])
           << "," << fmt_num(map.mean_norm[e]) << "," << fmt_num(map.stddev_norm[e]) << "\n";
    write_file_atomic(path, os.str());
}

} // namespace kam
