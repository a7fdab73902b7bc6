#include "dfmm/morton.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace dfmm
{

namespace
{

std::uint64_t spreadBits(std::uint32_t v)
{
    std::uint64_t x = v & 0xffffu;
    x = (x | (x << 32)) & 0x1f00000000ffffull;
    x = (x | (x << 16)) & 0x1f0000ff0000ffull;
    x = (x | (x << 8)) & 0x100f00f00f00f00full;
    x = (x | (x << 4)) & 0x10c30c30c30c30c3ull;
    x = (x | (x << 2)) & 0x1249249249249249ull;
    return x;
}

std::uint32_t compactBits(std::uint64_t x)
{
    x &= 0x1249249249249249ull;
    x = (x ^ (x >> 2)) & 0x10c30c30c30c30c3ull;
    x = (x ^ (x >> 4)) & 0x100f00f00f00f00full;
    x = (x ^ (x >> 8)) & 0x1f0000ff0000ffull;
    x = (x ^ (x >> 16)) & 0x1f00000000ffffull;
    x = (x ^ (x >> 32)) & 0x1fffffull;
    return static_cast<std::uint32_t>(x & 0xffffu);
}

int levelShift(int level) { return 3 * (kMaxDepth - level); }

} // namespace

std::uint64_t interleave3(std::uint32_t x, std::uint32_t y, std::uint32_t z)
{
    return spreadBits(x) | (spreadBits(y) << 1) | (spreadBits(z) << 2);
}

std::array<std::uint32_t, 3> deinterleave3(std::uint64_t bits)
{
    return {compactBits(bits), compactBits(bits >> 1), compactBits(bits >> 2)};
}

MortonKey MortonKey::fromCode(std::uint64_t code)
{
    int level = static_cast<int>(code & 0xffffu);
    if (level > kMaxDepth) { throw Error("malformed Morton key: level " + std::to_string(level) + " exceeds maximum"); }
    std::uint64_t anchor = code >> 16;
    std::uint64_t lowMask = (std::uint64_t{1} << levelShift(level)) - 1;
    if (anchor & lowMask) { throw Error("malformed Morton key: anchor bits set below level"); }
    return MortonKey(code);
}

MortonKey MortonKey::fromLattice(LatticeCoord c, int level)
{
    if (level < 0 || level > kMaxDepth) { throw Error("level out of range: " + std::to_string(level)); }
    const std::int64_t n = std::int64_t{1} << level;
    if (c.x < 0 || c.y < 0 || c.z < 0 || c.x >= n || c.y >= n || c.z >= n)
    {
        throw Error("lattice coordinate outside level " + std::to_string(level));
    }
    int shift = kMaxDepth - level;
    std::uint64_t bits = interleave3(static_cast<std::uint32_t>(c.x << shift), static_cast<std::uint32_t>(c.y << shift),
                                     static_cast<std::uint32_t>(c.z << shift));
    return MortonKey((bits << 16) | static_cast<std::uint64_t>(level));
}

MortonKey MortonKey::fromMortonIndex(std::uint64_t index, int level)
{
    if (level < 0 || level > kMaxDepth) { throw Error("level out of range: " + std::to_string(level)); }
    if (index >> (3 * level)) { throw Error("Morton index outside level " + std::to_string(level)); }
    return MortonKey(((index << levelShift(level)) << 16) | static_cast<std::uint64_t>(level));
}

std::uint64_t MortonKey::mortonIndex() const { return anchorBits() >> levelShift(level()); }

LatticeCoord MortonKey::lattice() const
{
    auto [x, y, z] = deinterleave3(anchorBits());
    int shift      = kMaxDepth - level();
    return {static_cast<std::int64_t>(x >> shift), static_cast<std::int64_t>(y >> shift),
            static_cast<std::int64_t>(z >> shift)};
}

int MortonKey::octant() const
{
    if (level() == 0) { return 0; }
    return static_cast<int>(mortonIndex() & 7u);
}

MortonKey MortonKey::ancestor(int lvl) const
{
    if (lvl < 0 || lvl > level()) { throw Error("ancestor level out of range"); }
    std::uint64_t mask = ~((std::uint64_t{1} << levelShift(lvl)) - 1);
    return MortonKey(((anchorBits() & mask) << 16) | static_cast<std::uint64_t>(lvl));
}

MortonKey MortonKey::firstDescendant(int lvl) const
{
    if (lvl < level() || lvl > kMaxDepth) { throw Error("descendant level out of range"); }
    return MortonKey((anchorBits() << 16) | static_cast<std::uint64_t>(lvl));
}

std::string to_string(MortonKey key)
{
    auto c = key.lattice();
    std::ostringstream os;
    os << "L" << key.level() << "(" << c.x << "," << c.y << "," << c.z << ")";
    return os.str();
}

BoundingCube fit_domain(std::span<const Point3> points, double margin)
{
    if (points.empty()) { throw Error("no points"); }
    if (!(margin >= 0) || !std::isfinite(margin)) { throw Error("domain margin must be finite and non-negative"); }
    Point3 lo = points.front(), hi = points.front();
    for (const auto& p : points)
    {
        if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z))
        {
            throw Error("non-finite point coordinate");
        }
        lo = {std::min(lo.x, p.x), std::min(lo.y, p.y), std::min(lo.z, p.z)};
        hi = {std::max(hi.x, p.x), std::max(hi.y, p.y), std::max(hi.z, p.z)};
    }
    double extent = std::max({hi.x - lo.x, hi.y - lo.y, hi.z - lo.z});
    if (extent <= 0) { return {lo, kSmallSideFloor}; }
    double side = extent * (1.0 + margin);
    // rounding in origin + side may still land just below the max coordinate
    auto covers = [&](double o, double h) { return o + side >= h; };
    while (!covers(lo.x, hi.x) || !covers(lo.y, hi.y) || !covers(lo.z, hi.z))
    {
        side = std::nextafter(side, INFINITY);
    }
    return {lo, side};
}

MortonKey encode(const Point3& p, int level, const BoundingCube& cube)
{
    if (level < 0 || level > kMaxDepth) { throw Error("level out of range: " + std::to_string(level)); }
    const double n = std::ldexp(1.0, level);
    auto cell      = [&](double v, double o) -> std::int64_t
    {
        if (!std::isfinite(v) || v < o || v > o + cube.side) { throw Error("point outside domain cube"); }
        auto c = static_cast<std::int64_t>(std::floor((v - o) / cube.side * n));
        return std::clamp<std::int64_t>(c, 0, static_cast<std::int64_t>(n) - 1);
    };
    return MortonKey::fromLattice({cell(p.x, cube.origin.x), cell(p.y, cube.origin.y), cell(p.z, cube.origin.z)}, level);
}

BoxGeometry decode(MortonKey key, const BoundingCube& cube)
{
    auto checked = MortonKey::fromCode(key.code());
    auto c       = checked.lattice();
    double side  = std::ldexp(cube.side, -checked.level());
    return {{cube.origin.x + static_cast<double>(c.x) * side, cube.origin.y + static_cast<double>(c.y) * side,
             cube.origin.z + static_cast<double>(c.z) * side},
            side};
}

Point3 box_center(MortonKey key, const BoundingCube& cube)
{
    auto g = decode(key, cube);
    return {g.anchor.x + 0.5 * g.side, g.anchor.y + 0.5 * g.side, g.anchor.z + 0.5 * g.side};
}

MortonKey parent(MortonKey key)
{
    if (key.level() == 0) { throw Error("root has no parent"); }
    return key.ancestor(key.level() - 1);
}

std::array<MortonKey, 8> children(MortonKey key)
{
    if (key.level() >= kMaxDepth) { throw Error("cannot refine beyond maximum depth"); }
    int childLevel = key.level() + 1;
    auto c         = key.lattice();
    std::array<MortonKey, 8> out;
    for (int o = 0; o < 8; ++o)
    {
        out[o] = MortonKey::fromLattice({2 * c.x + (o & 1), 2 * c.y + ((o >> 1) & 1), 2 * c.z + ((o >> 2) & 1)}, childLevel);
    }
    return out;
}

std::vector<MortonKey> neighbors(MortonKey key)
{
    std::vector<MortonKey> out;
    const int level      = key.level();
    const std::int64_t n = std::int64_t{1} << level;
    auto c               = key.lattice();
    out.reserve(26);
    for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx)
            {
                if (dx == 0 && dy == 0 && dz == 0) { continue; }
                LatticeCoord q{c.x + dx, c.y + dy, c.z + dz};
                if (q.x < 0 || q.y < 0 || q.z < 0 || q.x >= n || q.y >= n || q.z >= n) { continue; }
                out.push_back(MortonKey::fromLattice(q, level));
            }
    std::sort(out.begin(), out.end());
    return out;
}

} // namespace dfmm
