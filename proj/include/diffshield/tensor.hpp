// Dense row-major tensor with an optional gradient buffer of the same shape.
#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace diffshield {

inline std::size_t numel_of(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw std::invalid_argument("tensor: negative dimension");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

template <typename S>
struct TensorT {
    std::vector<int> shape;
    std::vector<S> data;
    std::vector<S> grad;  // empty until ensure_grad()

    TensorT() = default;
    explicit TensorT(std::vector<int> shp)
        : shape(std::move(shp)), data(numel_of(shape), S(0)) {}

    static TensorT zeros(std::vector<int> shp) { return TensorT(std::move(shp)); }

    std::size_t size() const { return data.size(); }

    int dim(int i) const {
        if (i < 0 || i >= static_cast<int>(shape.size()))
            throw std::out_of_range("tensor: dim index " + std::to_string(i) + " for shape " + shape_str(shape));
        return shape[static_cast<std::size_t>(i)];
    }

    // Views the tensor as [rows, cols] with cols = last dimension.
    int cols() const {
        if (shape.empty()) throw std::invalid_argument("tensor: cols() on rank-0");
        return shape.back();
    }
    int rows() const {
        int c = cols();
        return c == 0 ? 0 : static_cast<int>(size() / static_cast<std::size_t>(c));
    }
    S* row(int r) { return data.data() + static_cast<std::size_t>(r) * static_cast<std::size_t>(cols()); }
    const S* row(int r) const { return data.data() + static_cast<std::size_t>(r) * static_cast<std::size_t>(cols()); }
    S* grow(int r) { return grad.data() + static_cast<std::size_t>(r) * static_cast<std::size_t>(cols()); }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), S(0));
    }
    void zero_grad() { std::fill(grad.begin(), grad.end(), S(0)); }

    void fill(S v) { std::fill(data.begin(), data.end(), v); }

    bool all_finite() const {
        for (S v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }
};

// Reshapes in place and zero-fills, reusing capacity on repeated calls.
template <typename S>
inline void resize_zero(TensorT<S>& t, std::vector<int> shp) {
    t.shape = std::move(shp);
    t.data.assign(numel_of(t.shape), S(0));
}

template <typename S>
inline void check_shape(const TensorT<S>& t, const std::vector<int>& want, const char* op) {
    if (t.shape != want)
        throw std::invalid_argument(std::string(op) + ": shape " + shape_str(t.shape) + ", expected " + shape_str(want));
}

template <typename S>
inline void check_same_shape(const TensorT<S>& a, const TensorT<S>& b, const char* op) {
    if (a.shape != b.shape)
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
}

}  // namespace diffshield
