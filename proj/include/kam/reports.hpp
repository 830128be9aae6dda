#ifndef KAM_REPORTS_HPP
#define KAM_REPORTS_HPP

#include <string>
#include <vector>

#include "kam/interpret.hpp"
#include "kam/trainer.hpp"

namespace kam {

struct FoldCsvRow {
    std::string subject;
    std::string model;
    size_t fold = 0;
    size_t selected_epoch = 0;
    double val_acc = 0;
    double test_acc = 0;
    double learned_alpha = 0; // ignored unless with_alpha
    uint64_t seed = 0;
};

/// All writers emit a header row, one record per line, '\n' endings, and
/// write atomically (tmp file then rename). Numbers use shortest round-trip
/// formatting so reruns are byte-identical.
void write_fold_csv(const std::string& path, const std::vector<FoldCsvRow>& rows,
                    bool with_alpha);
void write_history_csv(const std::string& path, const std::vector<EpochStats>& history,
                       bool with_alpha);
void write_summary_csv(const std::string& path, const std::vector<SummaryRow>& rows);
void write_alpha_sweep_csv(const std::string& path, const AlphaSweepResult& res);
void write_pdp_csv(const std::string& path, const PdpResult& res);
void write_ptc_csv(const std::string& path, const PtcRecord& rec);
void write_channels_csv(const std::string& path, const ChannelWeightMap& map);

/// Shortest decimal that round-trips the value ("%.17g" fallback).
std::string fmt_num(double v);

/// Writes text to path atomically via a sibling tmp file.
void write_file_atomic(const std::string& path, const std::string& contents);

} // namespace kam

#endif
