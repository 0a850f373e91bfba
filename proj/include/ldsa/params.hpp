#pragma once

// Named parameter blocks with deterministic initialization. A ParamStore owns
// the long-lived values; per forward pass the blocks are bound onto a fresh
// tape as leaves, and gradients are collected back by block name in a fixed
// order. Copying a store yields an independent deep copy (used for the target
// network).

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ldsa/errors.hpp"
#include "ldsa/rng.hpp"
#include "ldsa/tensor.hpp"

namespace ldsa {

struct ParamBlock {
    std::string name;
    Shape shape;
    int fan_in = 1;
    std::vector<double> value;
};

class ParamStore {
public:
    void add(std::string name, Shape shape, int fan_in) {
        if (index_.count(name)) throw ConfigError("ParamStore: duplicate block '" + name + "'");
        if (fan_in < 1) throw ConfigError("ParamStore: fan_in must be >= 1 for block '" + name + "'");
        check_shape_valid(shape, "ParamStore");
        ParamBlock b;
        b.name = name;
        b.fan_in = fan_in;
        b.value.assign(static_cast<std::size_t>(numel(shape)), 0.0);
        b.shape = std::move(shape);
        index_[b.name] = static_cast<int>(blocks_.size());
        blocks_.push_back(std::move(b));
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    ParamBlock& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("ParamStore: unknown block '" + name + "'");
        return blocks_[static_cast<std::size_t>(it->second)];
    }

    const ParamBlock& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("ParamStore: unknown block '" + name + "'");
        return blocks_[static_cast<std::size_t>(it->second)];
    }

    int block_count() const { return static_cast<int>(blocks_.size()); }
    ParamBlock& block(int i) { return blocks_[static_cast<std::size_t>(i)]; }
    const ParamBlock& block(int i) const { return blocks_[static_cast<std::size_t>(i)]; }

    std::int64_t param_count() const {
        std::int64_t n = 0;
        for (const auto& b : blocks_) n += static_cast<std::int64_t>(b.value.size());
        return n;
    }

    // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every entry of every block.
    void init_uniform(Rng& rng) {
        for (auto& b : blocks_) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(b.fan_in));
            for (auto& v : b.value) v = rng.uniform(-bound, bound);
        }
    }

    std::vector<double> flatten() const {
        std::vector<double> out;
        out.reserve(static_cast<std::size_t>(param_count()));
        for (const auto& b : blocks_) out.insert(out.end(), b.value.begin(), b.value.end());
        return out;
    }

    void load_flat(std::span<const double> flat) {
        if (static_cast<std::int64_t>(flat.size()) != param_count()) {
            throw ShapeError("ParamStore: flat vector of " + std::to_string(flat.size()) +
                             " entries does not match " + std::to_string(param_count()) + " parameters");
        }
        std::size_t off = 0;
        for (auto& b : blocks_) {
            std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off),
                      flat.begin() + static_cast<std::ptrdiff_t>(off + b.value.size()), b.value.begin());
            off += b.value.size();
        }
    }

private:
    std::vector<ParamBlock> blocks_;
    std::map<std::string, int> index_;
};

// Leaves for every block on the given tape, addressable by name.
struct BoundParams {
    std::map<std::string, Tensor> tensors;

    const Tensor& operator[](const std::string& name) const {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw ConfigError("BoundParams: unknown block '" + name + "'");
        return it->second;
    }
};

inline BoundParams bind_params(Tape& tape, const ParamStore& store) {
    BoundParams bound;
    for (int i = 0; i < store.block_count(); ++i) {
        const ParamBlock& b = store.block(i);
        bound.tensors.emplace(b.name, tape.leaf(b.shape, b.value));
    }
    return bound;
}

// Gradients per block in store order; zeros where a block was off the backward
// path. Throws TrainingAbort on any non-finite entry, naming the block.
inline std::vector<std::vector<double>> collect_grads(const BoundParams& bound, const ParamStore& store) {
    std::vector<std::vector<double>> grads;
    grads.reserve(static_cast<std::size_t>(store.block_count()));
    for (int i = 0; i < store.block_count(); ++i) {
        const ParamBlock& b = store.block(i);
        auto g = bound[b.name].grad();
        if (g.empty()) {
            grads.emplace_back(b.value.size(), 0.0);
        } else {
            for (double v : g) {
                if (!std::isfinite(v)) {
                    throw TrainingAbort("non-finite gradient in parameter block '" + b.name + "'");
                }
            }
            grads.emplace_back(g.begin(), g.end());
        }
    }
    return grads;
}

}  // namespace ldsa
