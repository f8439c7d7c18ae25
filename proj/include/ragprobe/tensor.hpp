#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "ragprobe/errors.hpp"

namespace ragprobe {

// Dense row-major f32 tensor. Everything in this toolkit is rank 1 or 2.
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<float> data;

    Tensor() = default;
    explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)) {
        data.assign(static_cast<size_t>(numel_of(shape)), 0.0f);
    }

    static int64_t numel_of(const std::vector<int64_t>& s) {
        int64_t n = 1;
        for (int64_t d : s) n *= d;
        return n;
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }

    int64_t rows() const { return shape.empty() ? 0 : shape[0]; }
    int64_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

    float& at(int64_t i) { return data[static_cast<size_t>(i)]; }
    float at(int64_t i) const { return data[static_cast<size_t>(i)]; }
    float& at(int64_t i, int64_t j) { return data[static_cast<size_t>(i * cols() + j)]; }
    float at(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * cols() + j)]; }

    const float* row(int64_t i) const { return data.data() + i * cols(); }
    float* row(int64_t i) { return data.data() + i * cols(); }

    bool same_shape(const std::vector<int64_t>& s) const { return shape == s; }
};

inline std::string shape_str(const std::vector<int64_t>& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

} // namespace ragprobe
