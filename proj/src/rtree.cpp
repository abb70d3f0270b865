#include "kilnaudit/rtree.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace kilnaudit {

namespace {

// Orders `idx` into STR tiles: sort by x centre, cut into vertical slices of
// ~sqrt(n/cap) tiles each, sort every slice by y centre.
template <typename CenterOf>
void str_order(std::vector<std::uint32_t>& idx, std::size_t cap, CenterOf center)
{
    const std::size_t n = idx.size();
    const auto tiles = static_cast<std::size_t>(std::ceil(static_cast<double>(n) / static_cast<double>(cap)));
    const auto slices = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(tiles))));
    const std::size_t per_slice = slices * cap;
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return center(a).x() < center(b).x(); });
    for (std::size_t s = 0; s < n; s += per_slice) {
        const auto end = idx.begin() + static_cast<std::ptrdiff_t>(std::min(n, s + per_slice));
        std::sort(idx.begin() + static_cast<std::ptrdiff_t>(s), end,
                  [&](auto a, auto b) { return center(a).y() < center(b).y(); });
    }
}

} // namespace

StrTree::StrTree(const std::vector<Box>& items, int node_capacity)
    : items_(items.size())
{
    if (items.empty()) return;
    const auto cap = static_cast<std::size_t>(std::max(2, node_capacity));

    std::vector<std::uint32_t> order(items.size());
    std::iota(order.begin(), order.end(), 0U);
    str_order(order, cap, [&](std::uint32_t i) { return items[i].center(); });
    item_ids_ = order;
    item_boxes_.reserve(items.size());
    for (auto i : order) item_boxes_.push_back(items[i]);

    // Leaves.
    std::vector<std::uint32_t> level;
    for (std::size_t s = 0; s < order.size(); s += cap) {
        Node n;
        n.first = static_cast<std::uint32_t>(s);
        n.count = static_cast<std::uint32_t>(std::min(cap, order.size() - s));
        n.leaf = true;
        n.box.setEmpty();
        for (std::uint32_t i = n.first; i < n.first + n.count; ++i) n.box.extend(item_boxes_[i]);
        level.push_back(static_cast<std::uint32_t>(nodes_.size()));
        nodes_.push_back(n);
    }

    // Internal levels: children of a node must be contiguous in nodes_, so
    // each parent's children are copied into a fresh contiguous run.
    while (level.size() > 1) {
        str_order(level, cap, [&](std::uint32_t i) { return nodes_[i].box.center(); });
        std::vector<std::uint32_t> parents;
        for (std::size_t s = 0; s < level.size(); s += cap) {
            const std::size_t count = std::min(cap, level.size() - s);
            Node p;
            p.first = static_cast<std::uint32_t>(nodes_.size());
            p.count = static_cast<std::uint32_t>(count);
            p.leaf = false;
            p.box.setEmpty();
            for (std::size_t k = 0; k < count; ++k) {
                const Node child = nodes_[level[s + k]];
                p.box.extend(child.box);
                nodes_.push_back(child);
            }
            parents.push_back(static_cast<std::uint32_t>(nodes_.size()));
            nodes_.push_back(p);
        }
        level = std::move(parents);
    }
    root_ = level.front();
}

} // namespace kilnaudit
