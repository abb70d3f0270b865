#ifndef KILNAUDIT_RTREE_HPP
#define KILNAUDIT_RTREE_HPP

#include <Eigen/Geometry>

#include <cstdint>
#include <vector>

namespace kilnaudit {

/// Static R-tree bulk loaded with Sort-Tile-Recursive packing. Immutable after
/// construction, so concurrent queries are safe.
class StrTree {
public:
    using Box = Eigen::AlignedBox2d;

    StrTree() = default;
    explicit StrTree(const std::vector<Box>& items, int node_capacity = 16);

    std::size_t size() const { return items_; }

    /// Calls `visit(item_index)` for every item whose box intersects `query`.
    template <typename Visit>
    void query(const Box& query, Visit&& visit) const
    {
        if (nodes_.empty()) return;
        std::vector<std::uint32_t> stack{root_};
        while (!stack.empty()) {
            const Node& n = nodes_[stack.back()];
            stack.pop_back();
            if (!n.box.intersects(query)) continue;
            for (std::uint32_t i = n.first; i < n.first + n.count; ++i) {
                if (n.leaf) {
                    if (item_boxes_[i].intersects(query)) visit(static_cast<std::size_t>(item_ids_[i]));
                } else {
                    stack.push_back(i);
                }
            }
        }
    }

    std::vector<std::size_t> query(const Box& q) const
    {
        std::vector<std::size_t> out;
        query(q, [&out](std::size_t i) { out.push_back(i); });
        return out;
    }

private:
    struct Node {
        Box box;
        std::uint32_t first = 0;  // leaf: into item arrays, else into nodes_
        std::uint32_t count = 0;
        bool leaf = true;
    };

    std::size_t items_ = 0;
    std::vector<Box> item_boxes_;
    std::vector<std::uint32_t> item_ids_;
    std::vector<Node> nodes_;
    std::uint32_t root_ = 0;
};

} // namespace kilnaudit

#endif
