#pragma once

#include <cstddef>
#include <utility>
#include <vector>

namespace regisforge {

/// Union-find over dense indices that tracks the minimum label and the
/// member list of every component. Union by size with path halving;
/// `min_label(i)` is the component minimum whichever node ends up as root.
template <typename Label>
class MinDisjointSet {
public:
    std::size_t add(Label label) {
        const std::size_t i = parent_.size();
        parent_.push_back(i);
        min_.push_back(label);
        members_.push_back({i});
        return i;
    }

    std::size_t find(std::size_t i) const {
        while (parent_[i] != i) {
            parent_[i] = parent_[parent_[i]];
            i = parent_[i];
        }
        return i;
    }

    /// Returns the surviving root, or `size()` when a and b were already in
    /// one component.
    std::size_t unite(std::size_t a, std::size_t b) {
        a = find(a);
        b = find(b);
        if (a == b) return size();
        if (members_[a].size() < members_[b].size()) std::swap(a, b);
        parent_[b] = a;
        if (min_[b] < min_[a]) min_[a] = min_[b];
        members_[a].insert(members_[a].end(), members_[b].begin(), members_[b].end());
        members_[b].clear();
        members_[b].shrink_to_fit();
        return a;
    }

    const Label& min_label(std::size_t i) const { return min_[find(i)]; }
    /// Unordered member indices of i's component.
    const std::vector<std::size_t>& members(std::size_t i) const { return members_[find(i)]; }
    bool same(std::size_t a, std::size_t b) const { return find(a) == find(b); }
    std::size_t size() const { return parent_.size(); }

private:
    mutable std::vector<std::size_t> parent_;
    std::vector<Label> min_;
    std::vector<std::vector<std::size_t>> members_;
};

}  // namespace regisforge
