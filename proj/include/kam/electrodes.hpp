#ifndef KAM_ELECTRODES_HPP
#define KAM_ELECTRODES_HPP

#include <string>
#include <vector>

namespace kam {

/// The 62-channel 10-20 montage order used by the SEED recordings. Channel
/// indices throughout the code line up with this list.
inline const std::vector<std::string>& seed_electrodes() {
    static const std::vector<std::string> names = {
        "FP1", "FPZ", "FP2", "AF3", "AF4", "F7",  "F5",  "F3",  "F1",  "FZ",  "F2",
        "F4",  "F6",  "F8",  "FT7", "FC5", "FC3", "FC1", "FCZ", "FC2", "FC4", "FC6",
        "FT8", "T7",  "C5",  "C3",  "C1",  "CZ",  "C2",  "C4",  "C6",  "T8",  "TP7",
        "CP5", "CP3", "CP1", "CPZ", "CP2", "CP4", "CP6", "TP8", "P7",  "P5",  "P3",
        "P1",  "PZ",  "P2",  "P4",  "P6",  "P8",  "PO7", "PO5", "PO3", "POZ", "PO4",
        "PO6", "PO8", "CB1", "O1",  "OZ",  "O2",  "CB2"};
    return names;
}

/// Generic names for non-62-channel configurations (synthetic or reduced).
inline std::vector<std::string> generic_electrodes(size_t n) {
    if (n == 62) return seed_electrodes();
    std::vector<std::string> names;
    names.reserve(n);
    for (size_t i = 0; i < n; ++i) names.push_back("CH" + std::to_string(i + 1));
    return names;
}

} // namespace kam

#endif
