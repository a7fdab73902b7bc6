#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "dfmm/morton.hpp"

namespace dfmm
{

/// Half-open index range into a rank's sorted point arrays.
struct PointRange
{
    std::size_t begin{0};
    std::size_t count{0};

    std::size_t end() const { return begin + count; }
};

/*! @brief Uniform linear octree below a set of roots at a common level
 *
 * Every root is refined uniformly to `depth()`. All boxes are kept, including empty ones;
 * a box exists for interaction purposes when it contains at least one point. Boxes of each
 * level are stored densely in Morton order.
 */
class UniformTree
{
public:
    UniformTree() = default;

    /*! @brief Build from points already sorted by Morton key
     *
     * @param sortedPoints  points ordered by their key at `depth`; every point must fall under a root
     * @param roots         root keys at a common level, any order; duplicates are rejected
     * @param depth         leaf level, >= root level
     */
    UniformTree(std::span<const Point3> sortedPoints, const BoundingCube& cube, std::vector<MortonKey> roots, int depth);

    const BoundingCube& cube() const { return cube_; }
    int rootLevel() const { return rootLevel_; }
    int depth() const { return depth_; }

    std::span<const MortonKey> roots() const { return boxes(rootLevel_); }
    std::span<const MortonKey> leaves() const { return boxes(depth_); }
    std::span<const MortonKey> boxes(int level) const;

    bool containsLevel(int level) const { return level >= rootLevel_ && level <= depth_; }

    /// Dense index of `key` within its level, or nullopt when the key is not in this tree.
    std::optional<std::size_t> indexOf(MortonKey key) const;

    bool contains(MortonKey key) const { return indexOf(key).has_value(); }

    /// Number of points inside the box at `level` with dense index `index`.
    std::size_t pointCount(int level, std::size_t index) const;
    std::size_t pointCount(MortonKey key) const;

    /// A box exists when it holds at least one point.
    bool exists(MortonKey key) const { return pointCount(key) > 0; }

    /// Points owned by leaf `leafIndex`.
    PointRange leafRange(std::size_t leafIndex) const { return leafRanges_[leafIndex]; }

    std::size_t numPoints() const { return numPoints_; }

    std::size_t numBoxes() const { return index_.size(); }

    /// Replace leaf occupancy for a tree built without points (e.g. a global tree over remote roots).
    void setLeafCounts(std::span<const std::size_t> counts);

private:
    BoundingCube cube_;
    int rootLevel_{0};
    int depth_{0};
    std::size_t numPoints_{0};
    std::vector<std::vector<MortonKey>> levels_;
    std::vector<std::vector<std::size_t>> counts_;
    std::vector<PointRange> leafRanges_;
    std::unordered_map<MortonKey, std::uint32_t> index_;
};

/*! @brief Per-rank tree with local roots at `globalDepth` refined by `localDepth` levels
 *
 * When `roots` is empty the roots are the level-`globalDepth` boxes touched by the points.
 */
UniformTree build_tree(std::span<const Point3> sortedPoints, const BoundingCube& cube, int globalDepth, int localDepth,
                       std::vector<MortonKey> roots = {});

/// Near-field list of a leaf: adjacent boxes plus the leaf itself, sorted.
std::vector<MortonKey> compute_u_list(const UniformTree& tree, MortonKey leaf);

/// Same, without a tree: the lattice-only definition at any level.
std::vector<MortonKey> u_list(MortonKey box);

/// Well-separated same-level boxes whose parents are adjacent to (or equal) the box's parent, sorted.
std::vector<MortonKey> compute_v_list(const UniformTree& tree, MortonKey box);
std::vector<MortonKey> v_list(MortonKey box);

/// Lattice offset source - target in units of the shared box side.
LatticeCoord transfer_vector(MortonKey source, MortonKey target);

inline constexpr std::size_t kNumTransferVectors = 316;

/// Dense index in [0, 316) of an admissible V-list transfer vector; throws for any other offset.
std::size_t transfer_index(LatticeCoord t);

/// All admissible V-list transfer vectors, ordered by transfer_index.
const std::array<LatticeCoord, kNumTransferVectors>& transfer_vectors();

} // namespace dfmm
