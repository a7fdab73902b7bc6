#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dfmm/morton.hpp"
#include "dfmm/transport.hpp"

namespace dfmm
{

/// One source point travelling through the distributed sort.
struct Particle
{
    Point3 position;
    double charge{0};
    std::uint64_t id{0};
    MortonKey key; ///< key at kMaxDepth

    friend bool operator==(const Particle&, const Particle&) = default;
};

/// Sort order used everywhere: Morton key, ties broken by global id.
inline bool particle_less(const Particle& a, const Particle& b)
{
    return a.key != b.key ? a.key < b.key : a.id < b.id;
}

/// P - 1 keys; bucket i receives keys in [splitters[i-1], splitters[i]).
using Splitters = std::vector<MortonKey>;

/// Identifier of the sampling generator, recorded in run manifests.
inline constexpr const char* kSamplerId = "mt19937_64/seed_seq(seed,rank)/uniform-with-replacement";

/// Every b-th entry of the sorted gathered sample: splitter i-1 = samples[i * b] for i in [1, P).
Splitters select_splitters(std::span<const MortonKey> sortedSamples, int samplesPerRank, int numRanks);

/*! @brief Sample splitters across the world
 *
 * Each rank draws `samplesPerRank` keys with a generator seeded from (seed, rank); the samples are
 * gathered on rank 0, sorted, reduced to splitters and scattered back to every rank.
 */
Splitters sample_splitters(Communicator& comm, std::span<const MortonKey> localKeys, int samplesPerRank,
                           std::uint64_t seed);

/// Rank owning `key` under `splitters`.
int bucket_of(MortonKey key, const Splitters& splitters);

/// All-to-all exchange into splitter buckets; the result is sorted with particle_less.
std::vector<Particle> redistribute(Communicator& comm, std::vector<Particle> local, const Splitters& splitters);

/// Contiguous Morton run of level-`level` roots for `rank`, counts differing by at most one across ranks.
std::vector<MortonKey> assigned_roots(int rank, int numRanks, int level);

/// Splitters whose buckets coincide with the contiguous root runs of assigned_roots.
Splitters root_splitters(int numRanks, int level);

/*! @brief Move sampled splitters onto level-`level` box boundaries
 *
 * Each splitter moves to the nearest root boundary, then boundaries are made strictly increasing so
 * every rank keeps at least one root. Requires numRanks <= 8^level.
 */
Splitters snap_splitters(const Splitters& sampled, int numRanks, int level);

struct LayoutEntry
{
    MortonKey root;
    std::int32_t rank{0};
    std::uint64_t points{0};
};

/// Global map from local roots to owning ranks, identical on every rank.
class Layout
{
public:
    Layout() = default;
    Layout(int level, std::vector<LayoutEntry> entries);

    int level() const { return level_; }
    std::span<const LayoutEntry> entries() const { return entries_; }

    /// Owner of `key`, which may be any box at or below the layout level.
    int owner(MortonKey key) const;

    std::vector<MortonKey> roots_of(int rank) const;

    /// FNV-1a over the serialized entries.
    std::uint64_t digest() const;

private:
    int level_{0};
    std::vector<LayoutEntry> entries_;
};

/// Allgather of local root metadata. Overlapping or missing roots fail with "invalid layout".
Layout build_layout(Communicator& comm, std::span<const MortonKey> localRoots, std::span<const std::uint64_t> pointCounts,
                    int level);

} // namespace dfmm
