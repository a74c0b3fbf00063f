#pragma once

#include "vpt/error.hpp"
#include "vpt/tensor.hpp"

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace vpt {

// Ordered collection of named tensors. Insertion order is the canonical
// order for serialization, gradient reduction and optimizer updates.
class ParamStore {
public:
    struct Entry {
        std::string name;
        Tensor value;
    };

    ParamStore() = default;

    void add(std::string name, Tensor value) {
        if (index_.contains(name)) {
            throw UsageError("duplicate parameter '" + name + "'");
        }
        index_.emplace(name, entries_.size());
        entries_.push_back({std::move(name), std::move(value)});
    }

    bool contains(std::string_view name) const { return index_.contains(std::string(name)); }

    std::optional<std::size_t> find(std::string_view name) const {
        auto it = index_.find(std::string(name));
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    std::size_t index_of(std::string_view name) const {
        auto i = find(name);
        if (!i) throw UsageError("unknown parameter '" + std::string(name) + "'");
        return *i;
    }

    const Tensor &at(std::string_view name) const { return entries_[index_of(name)].value; }
    Tensor &at(std::string_view name) { return entries_[index_of(name)].value; }

    const Entry &entry(std::size_t i) const { return entries_[i]; }
    Entry &entry(std::size_t i) { return entries_[i]; }

    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }

    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }
    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }

    std::size_t total_count() const noexcept {
        std::size_t n = 0;
        for (const auto &e : entries_) n += e.value.size();
        return n;
    }

    // Same names and shapes, all values zero.
    ParamStore zeros_like() const {
        ParamStore out;
        for (const auto &e : entries_) out.add(e.name, Tensor(e.value.shape));
        return out;
    }

    bool same_layout(const ParamStore &o) const {
        if (o.size() != size()) return false;
        for (std::size_t i = 0; i < size(); ++i) {
            if (entries_[i].name != o.entries_[i].name ||
                entries_[i].value.shape != o.entries_[i].value.shape) {
                return false;
            }
        }
        return true;
    }

    // this += other, entry by entry in canonical order.
    void accumulate(const ParamStore &other) {
        if (!same_layout(other)) throw ShapeError("accumulate: parameter layouts differ");
        for (std::size_t i = 0; i < size(); ++i) {
            auto &dst = entries_[i].value.values;
            const auto &src = other.entries_[i].value.values;
            for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
        }
    }

    friend bool operator==(const ParamStore &a, const ParamStore &b) {
        if (!a.same_layout(b)) return false;
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (a.entries_[i].value.values != b.entries_[i].value.values) return false;
        }
        return true;
    }

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

} // namespace vpt
