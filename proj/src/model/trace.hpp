#pragma once

#include <string>
#include <utility>
#include <vector>

#include "tensor/tensor.hpp"

namespace csts::model {

// Named intermediate shapes in execution order.
struct ShapeTrace {
    std::vector<std::pair<std::string, Shape>> entries;

    void add(std::string name, Shape shape) { entries.emplace_back(std::move(name), std::move(shape)); }
    const Shape* find(const std::string& name) const {
        for (const auto& [n, s] : entries)
            if (n == name) return &s;
        return nullptr;
    }
};

inline void trace(ShapeTrace* t, const std::string& name, const Shape& shape) {
    if (t) t->add(name, shape);
}

} // namespace csts::model
