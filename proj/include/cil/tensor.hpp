#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "cil/common.hpp"

namespace cil::neural {

/// Dense row-major tensor of doubles. Shape is dynamic; layers interpret it.
struct Tensor {
    std::vector<std::int64_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::int64_t> s) : shape(std::move(s)) {
        data.assign(static_cast<std::size_t>(numel_of(shape)), 0.0);
    }

    static std::int64_t numel_of(const std::vector<std::int64_t>& s) {
        std::int64_t n = 1;
        for (auto e : s) n *= e;
        return n;
    }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    std::int64_t dim(std::size_t i) const { return shape.at(i); }
    std::size_t rank() const { return shape.size(); }

    double* ptr() { return data.data(); }
    const double* ptr() const { return data.data(); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

inline Tensor zeros_like(const Tensor& t) { return Tensor(t.shape); }

/// Stacks N same-shape tensors into one batch tensor with a leading dimension.
inline Tensor stack(const std::vector<const Tensor*>& items) {
    if (items.empty()) throw DomainError("stack: empty batch");
    const auto& first = *items[0];
    std::vector<std::int64_t> s;
    s.push_back(static_cast<std::int64_t>(items.size()));
    s.insert(s.end(), first.shape.begin(), first.shape.end());
    Tensor out(std::move(s));
    const std::size_t n = first.data.size();
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (!items[i]->same_shape(first)) throw DomainError("stack: shape mismatch");
        std::copy(items[i]->data.begin(), items[i]->data.end(), out.data.begin() + i * n);
    }
    return out;
}

}  // namespace cil::neural
