#include "dfmm/uniform_tree.hpp"

#include <algorithm>
#include <cstdlib>

namespace dfmm
{

UniformTree::UniformTree(std::span<const Point3> sortedPoints, const BoundingCube& cube, std::vector<MortonKey> roots,
                         int depth)
    : cube_(cube)
    , depth_(depth)
    , numPoints_(sortedPoints.size())
{
    std::sort(roots.begin(), roots.end());
    if (std::adjacent_find(roots.begin(), roots.end()) != roots.end()) { throw Error("duplicate tree root"); }
    rootLevel_ = roots.empty() ? depth : roots.front().level();
    for (auto r : roots)
    {
        if (r.level() != rootLevel_) { throw Error("tree roots must share a level"); }
    }
    if (depth < rootLevel_ || depth > kMaxDepth) { throw Error("tree depth out of range"); }

    const int numLevels = depth_ - rootLevel_ + 1;
    levels_.resize(numLevels);
    counts_.resize(numLevels);
    for (int l = rootLevel_; l <= depth_; ++l)
    {
        auto& keys                = levels_[l - rootLevel_];
        const std::uint64_t fanout = std::uint64_t{1} << (3 * (l - rootLevel_));
        keys.reserve(roots.size() * fanout);
        for (auto r : roots)
        {
            std::uint64_t first = r.mortonIndex() * fanout;
            for (std::uint64_t j = 0; j < fanout; ++j)
            {
                keys.push_back(MortonKey::fromMortonIndex(first + j, l));
            }
        }
        counts_[l - rootLevel_].assign(keys.size(), 0);
        for (std::size_t i = 0; i < keys.size(); ++i)
        {
            index_.emplace(keys[i], static_cast<std::uint32_t>(i));
        }
    }

    auto leafKeys = std::span<const MortonKey>(levels_.back());
    leafRanges_.assign(leafKeys.size(), PointRange{});
    MortonKey previous;
    for (std::size_t i = 0; i < sortedPoints.size(); ++i)
    {
        MortonKey key = encode(sortedPoints[i], depth_, cube_);
        if (i > 0 && key < previous) { throw Error("points are not sorted by Morton key"); }
        previous = key;
        auto it  = index_.find(key);
        if (it == index_.end()) { throw Error("point " + std::to_string(i) + " lies outside the tree roots"); }
        auto& range = leafRanges_[it->second];
        if (range.count == 0) { range.begin = i; }
        ++range.count;
    }
    // empty leaves start where the next occupied one would
    std::vector<std::size_t> leafCounts(leafRanges_.size());
    std::size_t offset = 0;
    for (std::size_t i = 0; i < leafRanges_.size(); ++i)
    {
        if (leafRanges_[i].count == 0) { leafRanges_[i].begin = offset; }
        offset        = leafRanges_[i].end();
        leafCounts[i] = leafRanges_[i].count;
    }
    setLeafCounts(leafCounts);
}

void UniformTree::setLeafCounts(std::span<const std::size_t> counts)
{
    if (counts.size() != counts_.back().size()) { throw Error("leaf count vector does not match the tree"); }
    std::copy(counts.begin(), counts.end(), counts_.back().begin());
    for (int l = depth_ - 1; l >= rootLevel_; --l)
    {
        const auto& fine = counts_[l + 1 - rootLevel_];
        auto& coarse     = counts_[l - rootLevel_];
        std::fill(coarse.begin(), coarse.end(), 0);
        for (std::size_t i = 0; i < fine.size(); ++i)
        {
            coarse[i / 8] += fine[i];
        }
    }
}

std::span<const MortonKey> UniformTree::boxes(int level) const
{
    if (!containsLevel(level) || levels_.empty()) { return {}; }
    return levels_[level - rootLevel_];
}

std::optional<std::size_t> UniformTree::indexOf(MortonKey key) const
{
    auto it = index_.find(key);
    if (it == index_.end()) { return std::nullopt; }
    return it->second;
}

std::size_t UniformTree::pointCount(int level, std::size_t index) const { return counts_[level - rootLevel_][index]; }

std::size_t UniformTree::pointCount(MortonKey key) const
{
    auto idx = indexOf(key);
    return idx ? pointCount(key.level(), *idx) : 0;
}

UniformTree build_tree(std::span<const Point3> sortedPoints, const BoundingCube& cube, int globalDepth, int localDepth,
                       std::vector<MortonKey> roots)
{
    if (globalDepth < 1) { throw Error("global depth must be at least 1"); }
    if (localDepth < 1) { throw Error("local depth must be at least 1"); }
    if (globalDepth + localDepth > kMaxDepth) { throw Error("tree depth exceeds maximum Morton depth"); }
    if (roots.empty())
    {
        for (const auto& p : sortedPoints)
        {
            auto r = encode(p, globalDepth, cube);
            if (roots.empty() || roots.back() != r) { roots.push_back(r); }
        }
    }
    for (auto r : roots)
    {
        if (r.level() != globalDepth) { throw Error("local root " + to_string(r) + " is not at the global depth"); }
    }
    return UniformTree(sortedPoints, cube, std::move(roots), globalDepth + localDepth);
}

std::vector<MortonKey> u_list(MortonKey box)
{
    auto out = neighbors(box);
    out.insert(std::lower_bound(out.begin(), out.end(), box), box);
    return out;
}

std::vector<MortonKey> compute_u_list(const UniformTree& tree, MortonKey leaf)
{
    if (leaf.level() != tree.depth() || !tree.contains(leaf)) { throw Error("U list requested for a non-leaf box"); }
    return u_list(leaf);
}

std::vector<MortonKey> v_list(MortonKey box)
{
    std::vector<MortonKey> out;
    if (box.level() < 2) { return out; }
    auto near         = u_list(box);
    auto parentHalo   = u_list(parent(box));
    out.reserve(189);
    for (auto p : parentHalo)
    {
        for (auto c : children(p))
        {
            if (!std::binary_search(near.begin(), near.end(), c)) { out.push_back(c); }
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<MortonKey> compute_v_list(const UniformTree& tree, MortonKey box)
{
    if (!tree.contains(box)) { throw Error("V list requested for a box outside the tree"); }
    return v_list(box);
}

LatticeCoord transfer_vector(MortonKey source, MortonKey target)
{
    if (source.level() != target.level()) { throw Error("transfer vector between boxes on different levels"); }
    auto s = source.lattice();
    auto t = target.lattice();
    return {s.x - t.x, s.y - t.y, s.z - t.z};
}

namespace
{

struct TransferTable
{
    std::array<LatticeCoord, kNumTransferVectors> vectors;
    std::array<int, 343> index;

    TransferTable()
    {
        index.fill(-1);
        std::size_t n = 0;
        for (int z = -3; z <= 3; ++z)
            for (int y = -3; y <= 3; ++y)
                for (int x = -3; x <= 3; ++x)
                {
                    if (std::max({std::abs(x), std::abs(y), std::abs(z)}) < 2) { continue; }
                    vectors[n]                                  = {x, y, z};
                    index[(z + 3) * 49 + (y + 3) * 7 + (x + 3)] = static_cast<int>(n);
                    ++n;
                }
    }
};

const TransferTable& transferTable()
{
    static const TransferTable table;
    return table;
}

} // namespace

std::size_t transfer_index(LatticeCoord t)
{
    if (std::abs(t.x) > 3 || std::abs(t.y) > 3 || std::abs(t.z) > 3)
    {
        throw Error("transfer vector outside the V-list range");
    }
    int i = transferTable().index[(t.z + 3) * 49 + (t.y + 3) * 7 + (t.x + 3)];
    if (i < 0) { throw Error("transfer vector inside the near field"); }
    return static_cast<std::size_t>(i);
}

const std::array<LatticeCoord, kNumTransferVectors>& transfer_vectors() { return transferTable().vectors; }

} // namespace dfmm
