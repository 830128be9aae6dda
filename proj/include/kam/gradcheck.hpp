#ifndef KAM_GRADCHECK_HPP
#define KAM_GRADCHECK_HPP

#include <cmath>
#include <functional>

#include "kam/tensor.hpp"

namespace kam {

/// Central-difference gradient of a scalar function of x, coordinate by
/// coordinate: (f(x + h e_i) - f(x - h e_i)) / (2h). Independent of the tape.
inline Tensor<double> finite_diff_grad(const std::function<double(const Tensor<double>&)>& f,
                                       const Tensor<double>& x, double h = 1e-5) {
    Tensor<double> g(x.shape);
    Tensor<double> xp = x;
    for (size_t i = 0; i < x.numel(); ++i) {
        double orig = xp.data[i];
        xp.data[i] = orig + h;
        double fp = f(xp);
        xp.data[i] = orig - h;
        double fm = f(xp);
        xp.data[i] = orig;
        g.data[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

/// max_i |a_i - b_i| / max(|b_i|, 1), with b as the reference gradient.
inline double max_rel_err(const Tensor<double>& a, const Tensor<double>& b) {
    if (!a.same_shape(b)) return std::numeric_limits<double>::infinity();
    double worst = 0;
    for (size_t i = 0; i < a.numel(); ++i) {
        double denom = std::max(std::fabs(b.data[i]), 1.0);
        worst = std::max(worst, std::fabs(a.data[i] - b.data[i]) / denom);
    }
    return worst;
}

} // namespace kam

#endif
