#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "dfmm/kifmm.hpp"
#include "dfmm/partition.hpp"
#include "dfmm/transport.hpp"
#include "dfmm/uniform_tree.hpp"

namespace dfmm
{

enum class RootPolicy
{
    contiguous, ///< equal contiguous Morton runs of roots, splitters follow the runs
    sampled,    ///< sampled splitters snapped to root boundaries
};

struct FmmConfig
{
    int globalDepth{1};
    int localDepth{2};
    int order{6};
    std::uint64_t seed{0};
    bool overlapNearField{true};
    RootPolicy rootPolicy{RootPolicy::contiguous};
    int samplesPerRank{200};
};

/// Rank that owns the global tree between gather and scatter.
inline constexpr int kNominatedRank = 0;

/// Bytes of one rank's local-root gather payload: roots * expansion length * bits / 8.
std::uint64_t global_message_size(std::uint64_t numRoots, int order, int precisionBits);

struct SetupTimings
{
    double sortAndTree{0};
    double layoutExchange{0};
    double graphConstruction{0};
    double uQueryExchange{0};
    double vQueryBuffers{0};
};

struct RuntimeTimings
{
    double total{0};
    double computation{0};
    double neighborAlltoallv{0};
    double gatherv{0};
    double scatterv{0};
    /// Wall time of the global upward and downward passes; nonzero only on the nominated rank.
    double globalStage{0};
};

/// Keys one rank asks a single neighbor about, by interaction kind.
struct QueryPacket
{
    int destination{0};
    std::vector<MortonKey> uKeys;
    std::vector<MortonKey> vKeys;
};

/*! @brief Remote box data cached on one rank
 *
 * Every queried key resolves to "exists" or "absent" during setup. Existing U-list leaves carry
 * their points and charges; existing V-list boxes get a slot in a preallocated u buffer that is
 * refilled by every evaluation. Asking for a key that was never resolved, or one that exists but
 * has no buffer, fails with "unresolved dependency".
 */
template<class Real>
class GhostData
{
public:
    struct Slot
    {
        std::size_t offset{0};
        std::size_t count{0};
    };

    std::optional<LeafSources<Real>> leaf(MortonKey key) const;
    const Real* up(MortonKey key) const;

    std::size_t numLeafGhosts() const { return leafSlots_.size(); }
    std::size_t numUpGhosts() const { return upSlots_.size(); }
    std::size_t numGhostPoints() const { return points_.size(); }

    std::vector<MortonKey> leafGhostKeys() const;
    std::vector<MortonKey> upGhostKeys() const;

    /// Test hook: forget the buffer of one ghost while keeping its existence record.
    bool drop(MortonKey key);

private:
    template<class>
    friend class DistributedFmm;

    std::unordered_map<MortonKey, bool> leafExists_;
    std::unordered_map<MortonKey, bool> upExists_;
    std::unordered_map<MortonKey, Slot> leafSlots_;
    std::unordered_map<MortonKey, std::size_t> upSlots_;
    std::vector<Point3> points_;
    std::vector<Real> charges_;
    std::vector<Real> up_;
    std::size_t length_{0};
};

template<class Real>
struct Evaluation
{
    /// Potentials of the rank's sorted local points.
    std::vector<Real> potentials;
    /// Counters of this evaluation only.
    TransportStats stats;
    RuntimeTimings timings;
};

/*! @brief One rank's share of a distributed uniform FMM
 *
 * Construction runs the collective setup: sort, local trees, layout, interaction queries,
 * neighbor graphs, existence exchange, U-list data exchange and V-list buffer allocation.
 * Every rank of the world must construct, evaluate and update together.
 */
template<class Real>
class DistributedFmm
{
public:
    /*! @param positions  this rank's initial share of the points, any order
     *  @param charges    one per position
     *  @param ids        globally unique identifiers, used to break key ties deterministically
     */
    DistributedFmm(Communicator& comm, std::span<const Point3> positions, std::span<const double> charges,
                   std::span<const std::uint64_t> ids, const FmmConfig& config, Clock clock = Clock{});

    Evaluation<Real> evaluate();

    /// New charges for the sorted local points; reruns the U-list data exchange only.
    void update_charges(std::span<const Real> charges);

    const FmmConfig& config() const { return config_; }
    const BoundingCube& cube() const { return cube_; }
    const Splitters& splitters() const { return splitters_; }
    const Layout& layout() const { return layout_; }
    const UniformTree& tree() const { return tree_; }
    const CommGraph& uGraph() const { return uGraph_; }
    const CommGraph& vGraph() const { return vGraph_; }
    const GhostData<Real>& ghosts() const { return ghosts_; }
    GhostData<Real>& ghosts() { return ghosts_; }
    const std::vector<QueryPacket>& queries() const { return queries_; }
    const SetupTimings& setupTimings() const { return setupTimings_; }
    /// Counters accumulated during setup.
    const TransportStats& setupStats() const { return setupStats_; }

    std::span<const Point3> points() const { return points_; }
    std::span<const Real> charges() const { return charges_; }
    std::span<const std::uint64_t> ids() const { return ids_; }

private:
    void exchangeExistence();
    void exchangeLeafData();
    void exchangeUp();
    void globalStage(std::vector<Buffer> gathered, std::vector<Buffer>& segments, double& seconds);

    Communicator& comm_;
    FmmConfig config_;
    Clock clock_;
    std::shared_ptr<const OperatorSet<Real>> ops_;

    BoundingCube cube_;
    Splitters splitters_;
    Layout layout_;
    UniformTree tree_;
    std::vector<Point3> points_;
    std::vector<Real> charges_;
    std::vector<std::uint64_t> ids_;

    CommGraph uGraph_;
    CommGraph vGraph_;
    std::vector<QueryPacket> queries_;
    /// Per neighbor position: existing local boxes the neighbor asked for, in request order.
    std::vector<std::vector<MortonKey>> uServed_;
    std::vector<std::vector<MortonKey>> vServed_;
    /// Per neighbor position: existing remote keys expected from that neighbor, in order.
    std::vector<std::vector<MortonKey>> uExpected_;
    std::vector<std::vector<MortonKey>> vExpected_;
    GhostData<Real> ghosts_;
    ExpansionStore<Real> store_;

    SetupTimings setupTimings_;
    TransportStats setupStats_;
};

/// Local roots whose coverage falls inside bucket `rank` of `splitters`.
std::vector<MortonKey> roots_in_bucket(const Splitters& splitters, int rank, int level);

} // namespace dfmm
