#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "dfmm/morton.hpp"

namespace dfmm
{

/// Raised on ranks that were waiting in a collective when another rank failed.
class TransportAborted : public Error
{
public:
    using Error::Error;
};

enum class CollectiveKind : int
{
    neighbor_alltoallv = 0,
    gatherv,
    scatterv,
    allgatherv,
    alltoallv,
};

inline constexpr std::size_t kNumCollectiveKinds = 5;

std::string_view to_string(CollectiveKind kind);

struct CollectiveStats
{
    std::uint64_t calls{0};
    std::uint64_t messagesSent{0};
    std::uint64_t bytesSent{0};
    std::uint64_t bytesReceived{0};
    double seconds{0};
};

/*! @brief Per-rank communication counters
 *
 * A message is one (source, destination, non-empty buffer) triple with source != destination;
 * the local part of a collective is a copy and is not counted.
 */
struct TransportStats
{
    std::array<CollectiveStats, kNumCollectiveKinds> byKind{};

    CollectiveStats& operator[](CollectiveKind k) { return byKind[static_cast<int>(k)]; }
    const CollectiveStats& operator[](CollectiveKind k) const { return byKind[static_cast<int>(k)]; }

    /// Counter difference, used to isolate one phase of a run.
    friend TransportStats operator-(const TransportStats& a, const TransportStats& b);
};

using Buffer = std::vector<std::byte>;

/// Static sparse communication graph of one rank: sorted, symmetric across ranks.
class CommGraph
{
public:
    CommGraph() = default;
    explicit CommGraph(std::vector<int> neighbors);

    std::span<const int> neighbors() const { return neighbors_; }
    std::size_t degree() const { return neighbors_.size(); }
    bool contains(int rank) const;
    /// Position of `rank` in neighbors(), or -1.
    int position(int rank) const;

private:
    std::vector<int> neighbors_;
};

/*! @brief Collective message passing for one rank
 *
 * Every operation is collective: all ranks of the world must call the same operations in the same
 * order. Buffers are raw bytes; the typed helpers below pack trivially copyable values.
 */
class Communicator
{
public:
    virtual ~Communicator() = default;

    virtual int rank() const = 0;
    virtual int size() const = 0;
    virtual std::string_view backend() const = 0;

    /// One buffer per rank in rank order, identical on all ranks.
    virtual std::vector<Buffer> allgatherv(Buffer payload) = 0;
    /// `outgoing[d]` goes to rank d; result[s] came from rank s.
    virtual std::vector<Buffer> alltoallv(std::vector<Buffer> outgoing) = 0;
    /// Result holds one buffer per rank at `root`, empty elsewhere.
    virtual std::vector<Buffer> gatherv(int root, Buffer payload) = 0;
    /// `segments` (one per rank) is read at `root` only.
    virtual Buffer scatterv(int root, std::vector<Buffer> segments) = 0;
    /// `outgoing[i]` goes to graph.neighbors()[i]; result is indexed the same way.
    virtual std::vector<Buffer> neighbor_alltoallv(const CommGraph& graph, std::vector<Buffer> outgoing) = 0;

    /// Collective graph construction; fails unless the adjacency is symmetric.
    virtual CommGraph create_graph(std::vector<int> neighbors) = 0;

    virtual const TransportStats& stats() const = 0;
};

/// Wall-clock used for all phase and collective timings; a disabled clock reads zero.
class Clock
{
public:
    explicit Clock(bool enabled = true)
        : enabled_(enabled)
    {
    }
    double now() const;
    bool enabled() const { return enabled_; }

private:
    bool enabled_;
};

/*! @brief Deterministic in-process world of P ranks
 *
 * Each rank runs on its own thread. Collectives rendezvous: the call completes once every rank
 * has arrived with the same operation, and deliveries are assembled in rank order, so results and
 * counters do not depend on thread scheduling. A rank arriving with a different operation, a rank
 * exiting while others wait, or an exception on any rank fails every waiting rank with an error
 * that names the stalled collective.
 */
class SimWorld
{
public:
    SimWorld(int size, std::uint64_t seed = 0, Clock clock = Clock{});
    ~SimWorld();
    SimWorld(const SimWorld&)            = delete;
    SimWorld& operator=(const SimWorld&) = delete;

    int size() const { return size_; }
    std::uint64_t seed() const { return seed_; }

    /// Run `program` on every rank and join; rethrows the first rank failure.
    void run(const std::function<void(Communicator&)>& program);

    const TransportStats& stats(int rank) const;

    struct State;

private:
    int size_;
    std::uint64_t seed_;
    Clock clock_;
    std::unique_ptr<State> state_;
};

/// Backend named by FMM_BACKEND (default "sim"); only the simulator ships with this library.
std::string selected_backend();

template<class T>
Buffer pack(std::span<const T> values)
{
    static_assert(std::is_trivially_copyable_v<T>);
    Buffer b(values.size_bytes());
    if (!values.empty()) { std::memcpy(b.data(), values.data(), values.size_bytes()); }
    return b;
}

template<class T>
Buffer pack(const std::vector<T>& values)
{
    return pack(std::span<const T>(values));
}

template<class T>
std::vector<T> unpack(const Buffer& b)
{
    static_assert(std::is_trivially_copyable_v<T>);
    if (b.size() % sizeof(T) != 0) { throw Error("buffer size is not a multiple of the element size"); }
    std::vector<T> out(b.size() / sizeof(T));
    if (!b.empty()) { std::memcpy(out.data(), b.data(), b.size()); }
    return out;
}

/// Unpack and concatenate buffers in order.
template<class T>
std::vector<T> unpack_all(const std::vector<Buffer>& buffers)
{
    std::vector<T> out;
    for (const auto& b : buffers)
    {
        auto part = unpack<T>(b);
        out.insert(out.end(), part.begin(), part.end());
    }
    return out;
}

} // namespace dfmm
