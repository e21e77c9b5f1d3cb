#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace rtt {

// Dense row-major tensor of doubles. Shape dims are positive;
// product(shape) == data.size() is enforced on construction.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;

    explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(checked_size(shape), 0.0) {}

    Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (checked_size(shape) != data.size())
            throw std::invalid_argument("tensor: shape/data size mismatch (" +
                                        std::to_string(checked_size(shape)) + " vs " +
                                        std::to_string(data.size()) + ")");
    }

    std::size_t size() const { return data.size(); }

    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    // 2-D accessors for image-shaped tensors
    double& at(int r, int c) { return data[static_cast<std::size_t>(r) * shape.back() + c]; }
    double at(int r, int c) const { return data[static_cast<std::size_t>(r) * shape.back() + c]; }

    int rows() const { return shape.size() >= 2 ? shape[shape.size() - 2] : 1; }
    int cols() const { return shape.empty() ? 0 : shape.back(); }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    static std::size_t checked_size(const std::vector<int>& s) {
        std::size_t n = 1;
        for (int d : s) {
            if (d <= 0) throw std::invalid_argument("tensor: nonpositive dimension");
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }
};

inline bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape == b.shape && a.data == b.data;
}

// A labeled grayscale image. Pixels live in [0,1]; label in [0, n_classes).
// `noisy` and `patient` are dataset bookkeeping (see datagen).
struct Example {
    Tensor x;
    int y = 0;
    bool noisy = false;
    int patient = -1;
};

}  // namespace rtt
