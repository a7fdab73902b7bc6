#include "dfmm/partition.hpp"

#include <algorithm>
#include <random>

namespace dfmm
{

Splitters select_splitters(std::span<const MortonKey> sortedSamples, int samplesPerRank, int numRanks)
{
    if (samplesPerRank < 1) { throw Error("samples per rank must be at least 1"); }
    if (numRanks < 1) { throw Error("number of ranks must be at least 1"); }
    if (sortedSamples.size() < static_cast<std::size_t>(samplesPerRank) * static_cast<std::size_t>(numRanks))
    {
        throw Error("too few samples for splitter selection");
    }
    Splitters out;
    out.reserve(numRanks - 1);
    for (int i = 1; i < numRanks; ++i)
    {
        out.push_back(sortedSamples[static_cast<std::size_t>(i) * samplesPerRank]);
    }
    return out;
}

Splitters sample_splitters(Communicator& comm, std::span<const MortonKey> localKeys, int samplesPerRank,
                           std::uint64_t seed)
{
    if (samplesPerRank < 1) { throw Error("samples per rank must be at least 1"); }
    const int p = comm.size();

    std::vector<MortonKey> samples;
    if (!localKeys.empty())
    {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(comm.rank())};
        std::mt19937_64 rng(seq);
        std::uniform_int_distribution<std::size_t> pick(0, localKeys.size() - 1);
        samples.reserve(samplesPerRank);
        for (int i = 0; i < samplesPerRank; ++i)
        {
            samples.push_back(localKeys[pick(rng)]);
        }
    }
    // the local point count travels along so the root can check the precondition
    std::vector<std::uint64_t> payload{static_cast<std::uint64_t>(localKeys.size())};
    for (auto k : samples)
        payload.push_back(k.code());

    auto gathered = comm.gatherv(0, pack(payload));

    std::vector<Buffer> segments;
    if (comm.rank() == 0)
    {
        std::uint64_t total = 0;
        std::vector<MortonKey> all;
        for (const auto& b : gathered)
        {
            auto part = unpack<std::uint64_t>(b);
            total += part.at(0);
            for (std::size_t i = 1; i < part.size(); ++i)
                all.push_back(MortonKey::fromCode(part[i]));
        }
        std::vector<std::uint64_t> reply;
        if (total < static_cast<std::uint64_t>(samplesPerRank) * static_cast<std::uint64_t>(p))
        {
            reply.push_back(0);
        }
        else
        {
            std::sort(all.begin(), all.end());
            reply.push_back(1);
            for (auto s : select_splitters(all, samplesPerRank, p))
                reply.push_back(s.code());
        }
        segments.assign(p, pack(reply));
    }
    auto reply = unpack<std::uint64_t>(comm.scatterv(0, std::move(segments)));
    if (reply.empty() || reply[0] == 0) { throw Error("too few points for splitter sampling"); }
    Splitters out;
    for (std::size_t i = 1; i < reply.size(); ++i)
        out.push_back(MortonKey::fromCode(reply[i]));
    return out;
}

int bucket_of(MortonKey key, const Splitters& splitters)
{
    return static_cast<int>(std::upper_bound(splitters.begin(), splitters.end(), key) - splitters.begin());
}

std::vector<Particle> redistribute(Communicator& comm, std::vector<Particle> local, const Splitters& splitters)
{
    if (splitters.size() + 1 != static_cast<std::size_t>(comm.size()))
    {
        throw Error("splitter count does not match world size");
    }
    if (!std::is_sorted(splitters.begin(), splitters.end())) { throw Error("splitters are not sorted"); }

    std::vector<Particle> result;
    if (comm.size() == 1) { result = std::move(local); }
    else
    {
        std::vector<std::vector<Particle>> outgoing(comm.size());
        for (const auto& p : local)
        {
            outgoing[bucket_of(p.key, splitters)].push_back(p);
        }
        std::vector<Buffer> buffers;
        buffers.reserve(comm.size());
        for (const auto& o : outgoing)
            buffers.push_back(pack(o));
        result = unpack_all<Particle>(comm.alltoallv(std::move(buffers)));
    }
    std::sort(result.begin(), result.end(), particle_less);
    return result;
}

std::vector<MortonKey> assigned_roots(int rank, int numRanks, int level)
{
    const std::uint64_t total = std::uint64_t{1} << (3 * level);
    if (numRanks < 1 || static_cast<std::uint64_t>(numRanks) > total)
    {
        throw Error("cannot assign " + std::to_string(total) + " roots to " + std::to_string(numRanks) + " ranks");
    }
    auto start = [&](std::uint64_t r) { return r * total / static_cast<std::uint64_t>(numRanks); };
    std::vector<MortonKey> out;
    for (std::uint64_t i = start(rank); i < start(rank + 1); ++i)
    {
        out.push_back(MortonKey::fromMortonIndex(i, level));
    }
    return out;
}

Splitters root_splitters(int numRanks, int level)
{
    Splitters out;
    for (int r = 1; r < numRanks; ++r)
    {
        out.push_back(assigned_roots(r, numRanks, level).front().firstDescendant(kMaxDepth));
    }
    return out;
}

Splitters snap_splitters(const Splitters& sampled, int numRanks, int level)
{
    const std::uint64_t total = std::uint64_t{1} << (3 * level);
    if (numRanks < 1 || static_cast<std::uint64_t>(numRanks) > total)
    {
        throw Error("cannot snap splitters: more ranks than roots");
    }
    if (sampled.size() + 1 != static_cast<std::size_t>(numRanks)) { throw Error("splitter count does not match world size"); }
    const std::uint64_t span = std::uint64_t{1} << (3 * (kMaxDepth - level));
    Splitters out;
    std::uint64_t previous = 0;
    for (int r = 1; r < numRanks; ++r)
    {
        std::uint64_t bits     = sampled[r - 1].firstDescendant(kMaxDepth).anchorBits();
        std::uint64_t boundary = (bits + span / 2) / span;
        std::uint64_t lo = previous + 1, hi = total - static_cast<std::uint64_t>(numRanks - r);
        boundary         = std::clamp(boundary, lo, hi);
        out.push_back(MortonKey::fromMortonIndex(boundary, level).firstDescendant(kMaxDepth));
        previous = boundary;
    }
    return out;
}

Layout::Layout(int level, std::vector<LayoutEntry> entries)
    : level_(level)
    , entries_(std::move(entries))
{
    std::sort(entries_.begin(), entries_.end(), [](const auto& a, const auto& b) { return a.root < b.root; });
    const std::uint64_t total = std::uint64_t{1} << (3 * level);
    for (std::size_t i = 0; i + 1 < entries_.size(); ++i)
    {
        if (entries_[i].root == entries_[i + 1].root)
        {
            throw Error("invalid layout: root " + to_string(entries_[i].root) + " claimed by ranks " +
                        std::to_string(entries_[i].rank) + " and " + std::to_string(entries_[i + 1].rank));
        }
    }
    if (entries_.size() != total)
    {
        throw Error("invalid layout: " + std::to_string(entries_.size()) + " of " + std::to_string(total) +
                    " roots claimed");
    }
    for (std::size_t i = 0; i < entries_.size(); ++i)
    {
        if (entries_[i].root.level() != level || entries_[i].root.mortonIndex() != i)
        {
            throw Error("invalid layout: unexpected root " + to_string(entries_[i].root));
        }
    }
}

int Layout::owner(MortonKey key) const
{
    if (key.level() < level_) { throw Error("owner lookup above the layout level"); }
    return entries_[key.ancestor(level_).mortonIndex()].rank;
}

std::vector<MortonKey> Layout::roots_of(int rank) const
{
    std::vector<MortonKey> out;
    for (const auto& e : entries_)
    {
        if (e.rank == rank) { out.push_back(e.root); }
    }
    return out;
}

std::uint64_t Layout::digest() const
{
    std::uint64_t h = 1469598103934665603ull;
    auto mix        = [&](std::uint64_t v)
    {
        for (int i = 0; i < 8; ++i)
        {
            h ^= (v >> (8 * i)) & 0xffu;
            h *= 1099511628211ull;
        }
    };
    mix(static_cast<std::uint64_t>(level_));
    for (const auto& e : entries_)
    {
        mix(e.root.code());
        mix(static_cast<std::uint64_t>(e.rank));
        mix(e.points);
    }
    return h;
}

Layout build_layout(Communicator& comm, std::span<const MortonKey> localRoots, std::span<const std::uint64_t> pointCounts,
                    int level)
{
    if (localRoots.size() != pointCounts.size()) { throw Error("one point count per local root required"); }
    std::vector<LayoutEntry> mine;
    for (std::size_t i = 0; i < localRoots.size(); ++i)
    {
        mine.push_back({localRoots[i], comm.rank(), pointCounts[i]});
    }
    return Layout(level, unpack_all<LayoutEntry>(comm.allgatherv(pack(mine))));
}

} // namespace dfmm
