#include "dfmm/distributed_fmm.hpp"

#include <algorithm>
#include <cstring>
#include <future>
#include <map>
#include <set>

namespace dfmm
{

std::uint64_t global_message_size(std::uint64_t numRoots, int order, int precisionBits)
{
    if (precisionBits != 32 && precisionBits != 64) { throw Error("precision must be 32 or 64 bits"); }
    return numRoots * expansion_length(order) * static_cast<std::uint64_t>(precisionBits) / 8;
}

std::vector<MortonKey> roots_in_bucket(const Splitters& splitters, int rank, int level)
{
    const std::uint64_t total = std::uint64_t{1} << (3 * level);
    std::vector<MortonKey> out;
    for (std::uint64_t i = 0; i < total; ++i)
    {
        auto root = MortonKey::fromMortonIndex(i, level);
        if (bucket_of(root.firstDescendant(kMaxDepth), splitters) == rank) { out.push_back(root); }
    }
    return out;
}

namespace
{

template<class F>
void phase(const char* label, F&& body)
{
    try
    {
        body();
    }
    catch (const TransportAborted&)
    {
        throw;
    }
    catch (const std::exception& e)
    {
        throw Error(std::string(label) + ": " + e.what());
    }
}

std::vector<MortonKey> keysOf(const Buffer& b)
{
    std::vector<MortonKey> out;
    for (auto c : unpack<std::uint64_t>(b))
        out.push_back(MortonKey::fromCode(c));
    return out;
}

void append(Buffer& out, const void* data, std::size_t bytes)
{
    auto p = static_cast<const std::byte*>(data);
    out.insert(out.end(), p, p + bytes);
}

} // namespace

template<class Real>
std::optional<LeafSources<Real>> GhostData<Real>::leaf(MortonKey key) const
{
    auto e = leafExists_.find(key);
    if (e == leafExists_.end()) { throw Error("unresolved dependency: near-field box " + to_string(key) + " was never queried"); }
    if (!e->second) { return std::nullopt; }
    auto s = leafSlots_.find(key);
    if (s == leafSlots_.end()) { throw Error("unresolved dependency: no ghost points for existing box " + to_string(key)); }
    return LeafSources<Real>{std::span<const Point3>(points_).subspan(s->second.offset, s->second.count),
                             std::span<const Real>(charges_).subspan(s->second.offset, s->second.count)};
}

template<class Real>
const Real* GhostData<Real>::up(MortonKey key) const
{
    auto e = upExists_.find(key);
    if (e == upExists_.end()) { throw Error("unresolved dependency: far-field box " + to_string(key) + " was never queried"); }
    if (!e->second) { return nullptr; }
    auto s = upSlots_.find(key);
    if (s == upSlots_.end()) { throw Error("unresolved dependency: no ghost u vector for existing box " + to_string(key)); }
    return up_.data() + s->second;
}

template<class Real>
std::vector<MortonKey> GhostData<Real>::leafGhostKeys() const
{
    std::vector<MortonKey> out;
    for (const auto& [k, s] : leafSlots_)
        out.push_back(k);
    std::sort(out.begin(), out.end());
    return out;
}

template<class Real>
std::vector<MortonKey> GhostData<Real>::upGhostKeys() const
{
    std::vector<MortonKey> out;
    for (const auto& [k, s] : upSlots_)
        out.push_back(k);
    std::sort(out.begin(), out.end());
    return out;
}

template<class Real>
bool GhostData<Real>::drop(MortonKey key)
{
    return leafSlots_.erase(key) + upSlots_.erase(key) > 0;
}

template<class Real>
DistributedFmm<Real>::DistributedFmm(Communicator& comm, std::span<const Point3> positions,
                                     std::span<const double> charges, std::span<const std::uint64_t> ids,
                                     const FmmConfig& config, Clock clock)
    : comm_(comm)
    , config_(config)
    , clock_(clock)
{
    const TransportStats before = comm_.stats();
    const int p = comm_.size();
    const int dg = config_.globalDepth, dl = config_.localDepth;

    if (positions.size() != charges.size() || positions.size() != ids.size())
    {
        throw Error("positions, charges and ids must have equal length");
    }
    if (dg < 1 || dl < 1 || dg + dl > kMaxDepth) { throw Error("invalid tree depths"); }
    if (static_cast<std::uint64_t>(p) > (std::uint64_t{1} << (3 * dg)))
    {
        throw Error("more ranks than level-" + std::to_string(dg) + " roots");
    }
    ops_ = shared_operators<Real>(config_.order);

    double t = clock_.now();
    phase("setup: sort and local trees",
          [&]
          {
              std::vector<Point3> corners;
              if (!positions.empty())
              {
                  Point3 lo = positions[0], hi = positions[0];
                  for (const auto& q : positions)
                  {
                      lo = {std::min(lo.x, q.x), std::min(lo.y, q.y), std::min(lo.z, q.z)};
                      hi = {std::max(hi.x, q.x), std::max(hi.y, q.y), std::max(hi.z, q.z)};
                  }
                  corners = {lo, hi};
              }
              cube_ = fit_domain(unpack_all<Point3>(comm_.allgatherv(pack(corners))));

              std::vector<Particle> local(positions.size());
              for (std::size_t i = 0; i < positions.size(); ++i)
              {
                  local[i] = {positions[i], charges[i], ids[i], encode(positions[i], kMaxDepth, cube_)};
              }
              if (config_.rootPolicy == RootPolicy::contiguous) { splitters_ = root_splitters(p, dg); }
              else
              {
                  std::vector<MortonKey> keys(local.size());
                  std::transform(local.begin(), local.end(), keys.begin(), [](const Particle& q) { return q.key; });
                  std::sort(keys.begin(), keys.end());
                  splitters_ = snap_splitters(sample_splitters(comm_, keys, config_.samplesPerRank, config_.seed), p, dg);
              }
              auto sorted = redistribute(comm_, std::move(local), splitters_);
              points_.resize(sorted.size());
              charges_.resize(sorted.size());
              ids_.resize(sorted.size());
              for (std::size_t i = 0; i < sorted.size(); ++i)
              {
                  points_[i]  = sorted[i].position;
                  charges_[i] = static_cast<Real>(sorted[i].charge);
                  ids_[i]     = sorted[i].id;
              }
              tree_ = build_tree(points_, cube_, dg, dl, roots_in_bucket(splitters_, comm_.rank(), dg));
          });
    setupTimings_.sortAndTree = clock_.now() - t;

    t = clock_.now();
    phase("setup: layout exchange",
          [&]
          {
              auto roots = tree_.roots();
              std::vector<std::uint64_t> counts;
              for (std::size_t i = 0; i < roots.size(); ++i)
                  counts.push_back(tree_.pointCount(dg, i));
              layout_ = build_layout(comm_, roots, counts, dg);
          });
    setupTimings_.layoutExchange = clock_.now() - t;

    // Candidate owners come from geometry over all local boxes so the graphs are
    // symmetric; queries are only issued on behalf of boxes that hold points.
    std::map<int, std::set<MortonKey>> uQuery, vQuery;
    t = clock_.now();
    phase("setup: queries and neighbor graphs",
          [&]
          {
              std::set<int> uRanks, vRanks;
              const int depth = tree_.depth();
              auto leaves     = tree_.leaves();
              for (std::size_t i = 0; i < leaves.size(); ++i)
              {
                  const bool active = tree_.pointCount(depth, i) > 0;
                  for (auto key : u_list(leaves[i]))
                  {
                      if (tree_.contains(key)) { continue; }
                      int owner = layout_.owner(key);
                      uRanks.insert(owner);
                      if (active) { uQuery[owner].insert(key); }
                  }
              }
              for (int l = std::max(2, dg + 1); l <= depth; ++l)
              {
                  auto boxes = tree_.boxes(l);
                  for (std::size_t i = 0; i < boxes.size(); ++i)
                  {
                      const bool active = tree_.pointCount(l, i) > 0;
                      for (auto key : v_list(boxes[i]))
                      {
                          if (tree_.contains(key)) { continue; }
                          int owner = layout_.owner(key);
                          vRanks.insert(owner);
                          if (active) { vQuery[owner].insert(key); }
                      }
                  }
              }
              std::set<int> all(uRanks);
              all.insert(vRanks.begin(), vRanks.end());
              for (int r : all)
              {
                  QueryPacket q;
                  q.destination = r;
                  q.uKeys.assign(uQuery[r].begin(), uQuery[r].end());
                  q.vKeys.assign(vQuery[r].begin(), vQuery[r].end());
                  queries_.push_back(std::move(q));
              }
              uGraph_ = comm_.create_graph({uRanks.begin(), uRanks.end()});
              vGraph_ = comm_.create_graph({vRanks.begin(), vRanks.end()});
          });
    setupTimings_.graphConstruction = clock_.now() - t;

    ghosts_.length_ = ops_->length;
    exchangeExistence();

    t = clock_.now();
    phase("setup: near-field data exchange", [&] { exchangeLeafData(); });
    setupTimings_.uQueryExchange += clock_.now() - t;

    store_      = ExpansionStore<Real>(tree_, ops_->length);
    setupStats_ = comm_.stats() - before;
}

template<class Real>
void DistributedFmm<Real>::exchangeExistence()
{
    auto resolve = [&](const CommGraph& graph, bool nearField, std::vector<std::vector<MortonKey>>& served,
                       std::vector<std::vector<MortonKey>>& expected, std::unordered_map<MortonKey, bool>& exists)
    {
        const auto neighbors = graph.neighbors();
        std::vector<std::vector<MortonKey>> asked(neighbors.size());
        std::vector<Buffer> out;
        for (std::size_t n = 0; n < neighbors.size(); ++n)
        {
            for (const auto& q : queries_)
            {
                if (q.destination == neighbors[n]) { asked[n] = nearField ? q.uKeys : q.vKeys; }
            }
            std::vector<std::uint64_t> c;
            for (auto k : asked[n])
                c.push_back(k.code());
            out.push_back(pack(c));
        }
        auto requests = comm_.neighbor_alltoallv(graph, std::move(out));

        served.assign(neighbors.size(), {});
        std::vector<Buffer> replies;
        for (std::size_t n = 0; n < neighbors.size(); ++n)
        {
            std::vector<std::uint64_t> counts;
            for (auto key : keysOf(requests[n]))
            {
                auto idx = tree_.indexOf(key);
                if (!idx) { throw Error("received query for box " + to_string(key) + " not owned by this rank"); }
                counts.push_back(tree_.pointCount(key.level(), *idx));
                if (counts.back() > 0) { served[n].push_back(key); }
            }
            replies.push_back(pack(counts));
        }
        auto answers = comm_.neighbor_alltoallv(graph, std::move(replies));

        expected.assign(neighbors.size(), {});
        std::vector<std::vector<std::uint64_t>> counts(neighbors.size());
        for (std::size_t n = 0; n < neighbors.size(); ++n)
        {
            counts[n] = unpack<std::uint64_t>(answers[n]);
            if (counts[n].size() != asked[n].size())
            {
                throw Error("existence reply from rank " + std::to_string(neighbors[n]) + " has wrong length");
            }
            for (std::size_t i = 0; i < counts[n].size(); ++i)
            {
                exists[asked[n][i]] = counts[n][i] > 0;
                if (counts[n][i] > 0) { expected[n].push_back(asked[n][i]); }
            }
        }
        return counts;
    };

    double t = clock_.now();
    phase("setup: near-field existence exchange",
          [&]
          {
              auto counts = resolve(uGraph_, true, uServed_, uExpected_, ghosts_.leafExists_);
              std::size_t offset = 0;
              for (std::size_t n = 0; n < counts.size(); ++n)
              {
                  std::size_t e = 0;
                  for (auto c : counts[n])
                  {
                      if (c == 0) { continue; }
                      ghosts_.leafSlots_[uExpected_[n][e++]] = {offset, static_cast<std::size_t>(c)};
                      offset += c;
                  }
              }
              ghosts_.points_.assign(offset, Point3{});
              ghosts_.charges_.assign(offset, Real(0));
          });
    setupTimings_.uQueryExchange += clock_.now() - t;

    t = clock_.now();
    phase("setup: far-field existence exchange and buffers",
          [&]
          {
              resolve(vGraph_, false, vServed_, vExpected_, ghosts_.upExists_);
              std::size_t slot = 0;
              for (const auto& keys : vExpected_)
                  for (auto k : keys)
                      ghosts_.upSlots_[k] = (slot++) * ghosts_.length_;
              ghosts_.up_.assign(slot * ghosts_.length_, Real(0));
          });
    setupTimings_.vQueryBuffers += clock_.now() - t;
}

template<class Real>
void DistributedFmm<Real>::exchangeLeafData()
{
    const auto neighbors = uGraph_.neighbors();
    std::vector<Buffer> out(neighbors.size());
    for (std::size_t n = 0; n < neighbors.size(); ++n)
    {
        std::vector<Point3> pts;
        std::vector<Real> qs;
        for (auto key : uServed_[n])
        {
            auto r = tree_.leafRange(*tree_.indexOf(key));
            pts.insert(pts.end(), points_.begin() + r.begin, points_.begin() + r.end());
            qs.insert(qs.end(), charges_.begin() + r.begin, charges_.begin() + r.end());
        }
        append(out[n], pts.data(), pts.size() * sizeof(Point3));
        append(out[n], qs.data(), qs.size() * sizeof(Real));
    }
    auto in = comm_.neighbor_alltoallv(uGraph_, std::move(out));

    for (std::size_t n = 0; n < neighbors.size(); ++n)
    {
        std::size_t total = 0;
        std::vector<std::pair<MortonKey, std::size_t>> parts;
        for (auto key : uExpected_[n])
        {
            auto s = ghosts_.leafSlots_.find(key);
            std::size_t count = s != ghosts_.leafSlots_.end() ? s->second.count : 0;
            parts.emplace_back(key, total);
            total += count;
        }
        const auto& b = in[n];
        if (b.size() != total * (sizeof(Point3) + sizeof(Real)))
        {
            throw Error("near-field payload from rank " + std::to_string(neighbors[n]) + " has unexpected size");
        }
        const std::byte* pts = b.data();
        const std::byte* qs  = b.data() + total * sizeof(Point3);
        for (auto [key, first] : parts)
        {
            auto s = ghosts_.leafSlots_.find(key);
            if (s == ghosts_.leafSlots_.end()) { continue; }
            std::memcpy(ghosts_.points_.data() + s->second.offset, pts + first * sizeof(Point3),
                        s->second.count * sizeof(Point3));
            std::memcpy(ghosts_.charges_.data() + s->second.offset, qs + first * sizeof(Real),
                        s->second.count * sizeof(Real));
        }
    }
}

template<class Real>
void DistributedFmm<Real>::exchangeUp()
{
    const std::size_t len = ops_->length;
    const auto neighbors  = vGraph_.neighbors();
    std::vector<Buffer> out(neighbors.size());
    for (std::size_t n = 0; n < neighbors.size(); ++n)
    {
        out[n].reserve(vServed_[n].size() * len * sizeof(Real));
        for (auto key : vServed_[n])
        {
            auto u = store_.up(key.level(), *tree_.indexOf(key));
            append(out[n], u.data(), len * sizeof(Real));
        }
    }
    auto in = comm_.neighbor_alltoallv(vGraph_, std::move(out));
    for (std::size_t n = 0; n < neighbors.size(); ++n)
    {
        if (in[n].size() != vExpected_[n].size() * len * sizeof(Real))
        {
            throw Error("u payload from rank " + std::to_string(neighbors[n]) + " has unexpected size");
        }
        for (std::size_t i = 0; i < vExpected_[n].size(); ++i)
        {
            auto s = ghosts_.upSlots_.find(vExpected_[n][i]);
            if (s == ghosts_.upSlots_.end()) { continue; }
            std::memcpy(ghosts_.up_.data() + s->second, in[n].data() + i * len * sizeof(Real), len * sizeof(Real));
        }
    }
}

template<class Real>
void DistributedFmm<Real>::globalStage(std::vector<Buffer> gathered, std::vector<Buffer>& segments, double& seconds)
{
    const double t  = clock_.now();
    const int dg    = config_.globalDepth;
    const auto& ops = *ops_;
    const std::size_t len = ops.length;

    UniformTree global(std::span<const Point3>{}, cube_, {MortonKey::root()}, dg);
    std::vector<std::size_t> counts;
    for (const auto& e : layout_.entries())
        counts.push_back(static_cast<std::size_t>(e.points));
    global.setLeafCounts(counts);
    ExpansionStore<Real> store(global, len);

    for (int r = 0; r < comm_.size(); ++r)
    {
        auto roots = layout_.roots_of(r);
        auto u     = unpack<Real>(gathered[r]);
        if (u.size() != roots.size() * len) { throw Error("gathered u payload from rank " + std::to_string(r) + " has unexpected size"); }
        for (std::size_t j = 0; j < roots.size(); ++j)
        {
            std::copy_n(u.begin() + j * len, len, store.up(dg, *global.indexOf(roots[j])).begin());
        }
    }
    upward_pass<Real>(global, ops, store);
    UpLookup<Real> lookup = [&](MortonKey key) -> const Real*
    {
        auto idx = global.indexOf(key);
        if (!idx || global.pointCount(key.level(), *idx) == 0) { return nullptr; }
        return store.up(key.level(), *idx).data();
    };
    for (int l = 2; l <= dg; ++l)
    {
        downward_level<Real>(global, l, ops, store, lookup);
    }

    segments.assign(comm_.size(), {});
    for (int r = 0; r < comm_.size(); ++r)
    {
        for (auto root : layout_.roots_of(r))
        {
            auto d = store.down(dg, *global.indexOf(root));
            append(segments[r], d.data(), len * sizeof(Real));
        }
    }
    seconds = clock_.now() - t;
}

template<class Real>
Evaluation<Real> DistributedFmm<Real>::evaluate()
{
    const TransportStats before = comm_.stats();
    const double start          = clock_.now();
    const auto& ops             = *ops_;
    const int dg                = config_.globalDepth;
    const std::size_t len       = ops.length;
    const std::size_t n         = points_.size();

    Evaluation<Real> result;
    std::vector<Real> near(n, Real(0));
    result.potentials.assign(n, Real(0));

    LeafLookup<Real> remote = [this](MortonKey key) { return ghosts_.leaf(key); };
    auto nearField          = [&] { p2p_uli<Real>(tree_, points_, charges_, remote, near); };
    std::future<void> nearTask;
    if (config_.overlapNearField) { nearTask = std::async(std::launch::async, nearField); }

    phase("evaluate",
          [&]
          {
              store_.clear();
              s2u_leaves<Real>(tree_, points_, charges_, ops, store_);
              upward_pass<Real>(tree_, ops, store_);
              exchangeUp();

              Buffer payload;
              auto roots = tree_.roots();
              for (std::size_t i = 0; i < roots.size(); ++i)
              {
                  append(payload, store_.up(dg, i).data(), len * sizeof(Real));
              }
              auto gathered = comm_.gatherv(kNominatedRank, std::move(payload));
              std::vector<Buffer> segments;
              if (comm_.rank() == kNominatedRank) { globalStage(std::move(gathered), segments, result.timings.globalStage); }
              Buffer mine = comm_.scatterv(kNominatedRank, std::move(segments));
              if (mine.size() != roots.size() * len * sizeof(Real)) { throw Error("scattered d payload has unexpected size"); }
              for (std::size_t i = 0; i < roots.size(); ++i)
              {
                  std::memcpy(store_.down(dg, i).data(), mine.data() + i * len * sizeof(Real), len * sizeof(Real));
              }

              UpLookup<Real> lookup = [this](MortonKey key) -> const Real*
              {
                  if (auto idx = tree_.indexOf(key))
                  {
                      return tree_.pointCount(key.level(), *idx) ? store_.up(key.level(), *idx).data() : nullptr;
                  }
                  return ghosts_.up(key);
              };
              for (int l = dg + 1; l <= tree_.depth(); ++l)
              {
                  downward_level<Real>(tree_, l, ops, store_, lookup);
              }
              d2t_leaves<Real>(tree_, points_, ops, store_, result.potentials);

              if (nearTask.valid()) { nearTask.get(); }
              else { nearField(); }
          });
    for (std::size_t i = 0; i < n; ++i)
    {
        result.potentials[i] += near[i];
    }

    result.stats           = comm_.stats() - before;
    auto& tm               = result.timings;
    tm.total               = clock_.now() - start;
    tm.neighborAlltoallv   = result.stats[CollectiveKind::neighbor_alltoallv].seconds;
    tm.gatherv             = result.stats[CollectiveKind::gatherv].seconds;
    tm.scatterv            = result.stats[CollectiveKind::scatterv].seconds;
    tm.computation         = std::max(0.0, tm.total - tm.neighborAlltoallv - tm.gatherv - tm.scatterv);
    return result;
}

template<class Real>
void DistributedFmm<Real>::update_charges(std::span<const Real> charges)
{
    if (charges.size() != charges_.size()) { throw Error("charge count does not match local point count"); }
    charges_.assign(charges.begin(), charges.end());
    phase("charge update", [&] { exchangeLeafData(); });
    store_.clear();
    std::fill(ghosts_.up_.begin(), ghosts_.up_.end(), Real(0));
}

template class GhostData<float>;
template class GhostData<double>;
template class DistributedFmm<float>;
template class DistributedFmm<double>;

} // namespace dfmm
