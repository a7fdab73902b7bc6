#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dfmm
{

/// Base error type for the library. Messages carry the failing condition.
class Error : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

struct Point3
{
    double x{0}, y{0}, z{0};

    friend bool operator==(const Point3&, const Point3&) = default;
};

inline constexpr int kMaxDepth = 16;

/// Relative margin applied by default when fitting the domain cube.
inline constexpr double kDefaultDomainMargin = 1e-6;

/// Side used when every input point coincides.
inline constexpr double kSmallSideFloor = 1.0;

struct BoundingCube
{
    Point3 origin;
    double side{1.0};

    friend bool operator==(const BoundingCube&, const BoundingCube&) = default;
};

/// Integer lattice coordinates of a box anchor at the box's own level.
struct LatticeCoord
{
    std::int64_t x{0}, y{0}, z{0};

    friend bool operator==(const LatticeCoord&, const LatticeCoord&) = default;
};

/*! @brief 64-bit Morton key
 *
 * The upper 48 bits hold the interleaved anchor coordinates at kMaxDepth resolution
 * (bit 3b is x, 3b+1 is y, 3b+2 is z for lattice bit b), the lower 16 bits hold the level.
 * Anchor bits below the key's level are always zero, so ordering by code is Morton order
 * at a fixed level and pre-order across levels.
 */
class MortonKey
{
public:
    constexpr MortonKey() = default;

    /// Validating constructor from a raw code.
    static MortonKey fromCode(std::uint64_t code);

    /// Key for the box at `level` whose anchor has lattice coordinates `c` (in level units).
    static MortonKey fromLattice(LatticeCoord c, int level);

    /// Key of the box at position `index` in Morton order among the 8^level boxes of `level`.
    static MortonKey fromMortonIndex(std::uint64_t index, int level);

    static constexpr MortonKey root() { return MortonKey{}; }

    constexpr std::uint64_t code() const { return code_; }
    constexpr int level() const { return static_cast<int>(code_ & 0xffffu); }

    /// Interleaved anchor bits only (level stripped).
    constexpr std::uint64_t anchorBits() const { return code_ >> 16; }

    /// Position of this box in Morton order among the 8^level boxes of its level.
    std::uint64_t mortonIndex() const;

    /// Anchor in lattice units of the key's own level.
    LatticeCoord lattice() const;

    /// Octant of this box within its parent, 0..7 (x + 2y + 4z).
    int octant() const;

    /// Ancestor at `level` (<= this level).
    MortonKey ancestor(int level) const;

    /// First descendant at `level` (>= this level), i.e. the same anchor refined.
    MortonKey firstDescendant(int level) const;

    friend constexpr auto operator<=>(const MortonKey&, const MortonKey&) = default;

private:
    constexpr explicit MortonKey(std::uint64_t code)
        : code_(code)
    {
    }

    std::uint64_t code_{0};
};

std::string to_string(MortonKey key);

BoundingCube fit_domain(std::span<const Point3> points, double margin = kDefaultDomainMargin);

MortonKey encode(const Point3& p, int level, const BoundingCube& cube);

struct BoxGeometry
{
    Point3 anchor;
    double side;
};

BoxGeometry decode(MortonKey key, const BoundingCube& cube);

/// Center of the box in domain coordinates.
Point3 box_center(MortonKey key, const BoundingCube& cube);

MortonKey parent(MortonKey key);

/// The 8 children in Morton order.
std::array<MortonKey, 8> children(MortonKey key);

/// Same-level adjacent boxes inside the lattice, excluding the key itself, sorted.
std::vector<MortonKey> neighbors(MortonKey key);

/// Interleave the low 16 bits of each coordinate into a 48-bit Morton code.
std::uint64_t interleave3(std::uint32_t x, std::uint32_t y, std::uint32_t z);

/// Inverse of interleave3.
std::array<std::uint32_t, 3> deinterleave3(std::uint64_t bits);

} // namespace dfmm

template<>
struct std::hash<dfmm::MortonKey>
{
    std::size_t operator()(const dfmm::MortonKey& k) const noexcept { return std::hash<std::uint64_t>{}(k.code()); }
};
