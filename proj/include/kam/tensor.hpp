#ifndef KAM_TENSOR_HPP
#define KAM_TENSOR_HPP

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace kam {

enum class Dtype { float32, float64 };

template <class T> struct dtype_of;
template <> struct dtype_of<float>  { static constexpr Dtype value = Dtype::float32; };
template <> struct dtype_of<double> { static constexpr Dtype value = Dtype::float64; };

/// Dense row-major N-dimensional array. Immutable by convention once handed
/// to a Tape; nothing enforces it, so treat shared tensors as read-only.
template <class T>
struct Tensor {
    std::vector<size_t> shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(std::vector<size_t> s, T fill = T(0))
        : shape(std::move(s)), data(count(shape), fill) {}
    Tensor(std::vector<size_t> s, std::vector<T> d)
        : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != count(shape))
            throw std::invalid_argument("Tensor: data length does not match shape");
    }

    static Tensor scalar(T v) { return Tensor({1}, std::vector<T>{v}); }

    static size_t count(const std::vector<size_t>& s) {
        size_t n = 1;
        for (size_t d : s) {
            if (d == 0) throw std::invalid_argument("Tensor: zero dimension");
            n *= d;
        }
        return n;
    }

    size_t numel() const { return data.size(); }
    size_t rank() const { return shape.size(); }
    bool is_scalar() const { return data.size() == 1; }
    constexpr Dtype dtype() const { return dtype_of<T>::value; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    T& operator()(size_t i) { return data[i]; }
    const T& operator()(size_t i) const { return data[i]; }
    T& operator()(size_t i, size_t j) { return data[i * shape[1] + j]; }
    const T& operator()(size_t i, size_t j) const { return data[i * shape[1] + j]; }
    T& operator()(size_t i, size_t j, size_t k) {
        return data[(i * shape[1] + j) * shape[2] + k];
    }
    const T& operator()(size_t i, size_t j, size_t k) const {
        return data[(i * shape[1] + j) * shape[2] + k];
    }
    T& operator()(size_t i, size_t j, size_t k, size_t l) {
        return data[((i * shape[1] + j) * shape[2] + k) * shape[3] + l];
    }
    const T& operator()(size_t i, size_t j, size_t k, size_t l) const {
        return data[((i * shape[1] + j) * shape[2] + k) * shape[3] + l];
    }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <class U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << "(";
        for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
        os << ")";
        return os.str();
    }
};

inline std::string shape_str(const std::vector<size_t>& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

} // namespace kam

#endif
