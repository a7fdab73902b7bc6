#include <doctest.h>

#include <algorithm>
#include <map>
#include <mutex>
#include <random>
#include <set>

#include "dfmm/bench.hpp"
#include "dfmm/distributed_fmm.hpp"
#include "dfmm/kernels.hpp"

using namespace dfmm;

namespace
{

struct World
{
    int p{1};
    std::vector<Point3> points;
    std::vector<double> charges;
};

World uniformWorld(int p, std::size_t n, std::uint64_t seed)
{
    return {p, generate_points(Distribution::uniform_cube, n, seed), generate_charges(n, seed)};
}

/// Construct on every rank, then hand each rank's instance to `body`.
template<class Real = double, class Body>
void onRanks(const World& w, const FmmConfig& cfg, const Body& body)
{
    SimWorld world(w.p, cfg.seed, Clock(false));
    const std::size_t n = w.points.size();
    world.run(
        [&](Communicator& c)
        {
            const std::size_t lo = n * c.rank() / w.p, hi = n * (c.rank() + 1) / w.p;
            std::vector<std::uint64_t> ids(hi - lo);
            std::iota(ids.begin(), ids.end(), lo);
            DistributedFmm<Real> fmm(c, std::span(w.points).subspan(lo, hi - lo), std::span(w.charges).subspan(lo, hi - lo),
                                     ids, cfg, Clock(false));
            body(c, fmm);
        });
}

/// Potentials by global id after one evaluation.
std::vector<double> evaluateAll(const World& w, const FmmConfig& cfg)
{
    std::vector<double> out(w.points.size());
    onRanks(w, cfg,
            [&](Communicator&, DistributedFmm<double>& f)
            {
                auto e = f.evaluate();
                for (std::size_t i = 0; i < e.potentials.size(); ++i)
                    out[f.ids()[i]] = e.potentials[i];
            });
    return out;
}

FmmConfig config(int dg, int dl, int order)
{
    FmmConfig c;
    c.globalDepth = dg;
    c.localDepth  = dl;
    c.order       = order;
    c.seed        = 42;
    return c;
}

std::string messageOf(const std::function<void()>& f)
{
    try
    {
        f();
    }
    catch (const std::exception& e)
    {
        return e.what();
    }
    return {};
}

} // namespace

TEST_CASE("message size of the root gather")
{
    CHECK(global_message_size(1, 3, 32) == 104);
    CHECK(global_message_size(2, 3, 64) == 416);
    CHECK(global_message_size(1, 2, 32) == 32);
    CHECK(global_message_size(0, 6, 64) == 0);
    CHECK_THROWS_AS(global_message_size(1, 2, 16), Error);
}

TEST_CASE("configuration errors")
{
    auto w = uniformWorld(16, 256, 1);
    auto m = messageOf([&] { onRanks(w, config(1, 2, 4), [](Communicator&, DistributedFmm<double>&) {}); });
    CHECK(m.find("more ranks than level-1 roots") != std::string::npos);
    w.p = 1;
    m   = messageOf([&] { onRanks(w, config(0, 2, 4), [](Communicator&, DistributedFmm<double>&) {}); });
    CHECK(m.find("invalid tree depths") != std::string::npos);
}

TEST_CASE("one rank has nothing to exchange")
{
    auto w = uniformWorld(1, 2000, 3);
    onRanks(w, config(1, 2, 4),
            [&](Communicator&, DistributedFmm<double>& f)
            {
                CHECK(f.uGraph().degree() == 0);
                CHECK(f.vGraph().degree() == 0);
                CHECK(f.ghosts().numLeafGhosts() == 0);
                CHECK(f.ghosts().numUpGhosts() == 0);
                auto e = f.evaluate();
                CHECK(e.stats[CollectiveKind::neighbor_alltoallv].messagesSent == 0);
                CHECK(e.stats[CollectiveKind::gatherv].messagesSent == 0);
            });
    RunConfig rc;
    rc.p = 1, rc.n = 2000, rc.localDepth = 2, rc.order = 4, rc.seed = 3;
    auto ref = run_reference(rc, w.points, w.charges);
    CHECK(evaluateAll(w, config(1, 2, 4)) == ref);
}

TEST_CASE("graph degrees")
{
    SUBCASE("eight ranks, every octant touches every other")
    {
        auto w = uniformWorld(8, 4096, 5);
        onRanks(w, config(1, 1, 3),
                [](Communicator& c, DistributedFmm<double>& f)
                {
                    CHECK(f.uGraph().degree() == 7);
                    CHECK(f.vGraph().degree() == 7);
                    CHECK_FALSE(f.uGraph().contains(c.rank()));
                });
    }
    SUBCASE("sixty-four ranks")
    {
        auto w = uniformWorld(64, 64 * 64, 6);
        onRanks(w, config(2, 1, 2),
                [](Communicator&, DistributedFmm<double>& f)
                {
                    const auto root = f.tree().roots()[0];
                    auto c          = root.lattice();
                    CHECK(f.uGraph().degree() <= 26);
                    CHECK(f.vGraph().degree() <= 26);
                    const bool interior = std::min({c.x, c.y, c.z}) >= 1 && std::max({c.x, c.y, c.z}) <= 2;
                    // boundary ranks lose the neighbors that would lie outside the domain
                    std::size_t expected = 1;
                    for (auto v : {c.x, c.y, c.z})
                        expected *= (v == 0 || v == 3) ? 2 : 3;
                    CHECK(f.uGraph().degree() == expected - 1);
                    if (interior) { CHECK(f.uGraph().degree() == 26); }
                });
    }
}

TEST_CASE("runtime communication is three collectives")
{
    auto w = uniformWorld(8, 4096, 7);
    auto cfg = config(1, 2, 3);
    onRanks(w, cfg,
            [&](Communicator& c, DistributedFmm<double>& f)
            {
                auto before = c.stats();
                auto e      = f.evaluate();
                auto delta  = c.stats() - before;
                for (std::size_t k = 0; k < kNumCollectiveKinds; ++k)
                {
                    CHECK(delta.byKind[k].calls == e.stats.byKind[k].calls);
                    CHECK(delta.byKind[k].bytesSent == e.stats.byKind[k].bytesSent);
                }
                CHECK(e.stats[CollectiveKind::neighbor_alltoallv].calls == 1);
                CHECK(e.stats[CollectiveKind::gatherv].calls == 1);
                CHECK(e.stats[CollectiveKind::scatterv].calls == 1);
                CHECK(e.stats[CollectiveKind::allgatherv].calls == 0);
                CHECK(e.stats[CollectiveKind::alltoallv].calls == 0);

                const auto payload = global_message_size(f.tree().roots().size(), cfg.order, 64);
                if (c.rank() != kNominatedRank)
                {
                    CHECK(e.stats[CollectiveKind::gatherv].bytesSent == payload);
                    CHECK(e.stats[CollectiveKind::scatterv].bytesSent == 0);
                }
                else
                {
                    CHECK(e.stats[CollectiveKind::gatherv].bytesReceived == 7 * payload);
                    CHECK(e.stats[CollectiveKind::scatterv].bytesSent == 7 * payload);
                }

                // zero charges: zero potentials, same traffic
                std::vector<double> zero(f.charges().size(), 0.0);
                f.update_charges(zero);
                auto z = f.evaluate();
                CHECK(std::all_of(z.potentials.begin(), z.potentials.end(), [](double v) { return v == 0.0; }));
                for (std::size_t k = 0; k < kNumCollectiveKinds; ++k)
                {
                    CHECK(z.stats.byKind[k].calls == e.stats.byKind[k].calls);
                    CHECK(z.stats.byKind[k].bytesSent == e.stats.byKind[k].bytesSent);
                    CHECK(z.stats.byKind[k].messagesSent == e.stats.byKind[k].messagesSent);
                }
            });
}

TEST_CASE("distributed potentials match the single-rank pipeline")
{
    for (auto [p, dg, dl] : {std::tuple{8, 1, 2}, std::tuple{64, 2, 1}})
    {
        auto w   = uniformWorld(p, 6000, 11);
        auto cfg = config(dg, dl, 4);
        RunConfig rc;
        rc.p = p, rc.n = w.points.size(), rc.globalDepth = dg, rc.localDepth = dl, rc.order = 4;
        auto ref = run_reference(rc, w.points, w.charges);
        auto got = evaluateAll(w, cfg);
        CHECK(relative_l2_error(got, ref) <= 1e-10);

        cfg.overlapNearField = false;
        CHECK(evaluateAll(w, cfg) == got);
        cfg.rootPolicy     = RootPolicy::sampled;
        cfg.samplesPerRank = 50;
        cfg.overlapNearField = true;
        CHECK(relative_l2_error(evaluateAll(w, cfg), ref) <= 1e-10);
    }
}

TEST_CASE("charge updates")
{
    auto w   = uniformWorld(8, 3000, 13);
    auto cfg = config(1, 2, 4);

    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-1, 1);
    std::vector<double> fresh(w.points.size());
    for (auto& v : fresh)
        v = u(rng);
    World other = w;
    other.charges = fresh;
    auto expected = evaluateAll(other, cfg);
    auto first    = evaluateAll(w, cfg);

    std::vector<double> same(w.points.size()), doubled(w.points.size()), updated(w.points.size());
    onRanks(w, cfg,
            [&](Communicator& c, DistributedFmm<double>& f)
            {
                f.evaluate();
                auto setupBefore = f.setupStats();
                std::vector<double> q(f.charges().begin(), f.charges().end());
                f.update_charges(q);
                auto a = f.evaluate();
                for (auto& v : q)
                    v *= 2;
                f.update_charges(q);
                auto b = f.evaluate();
                for (std::size_t i = 0; i < q.size(); ++i)
                    q[i] = fresh[f.ids()[i]];
                auto mark = c.stats();
                f.update_charges(q);
                auto exchange = c.stats() - mark;
                // only the near-field payload moves
                CHECK(exchange[CollectiveKind::neighbor_alltoallv].calls == 1);
                CHECK(exchange[CollectiveKind::gatherv].calls == 0);
                auto d = f.evaluate();
                for (std::size_t i = 0; i < q.size(); ++i)
                {
                    same[f.ids()[i]]    = a.potentials[i];
                    doubled[f.ids()[i]] = b.potentials[i];
                    updated[f.ids()[i]] = d.potentials[i];
                }
                CHECK(f.setupStats()[CollectiveKind::allgatherv].calls == setupBefore[CollectiveKind::allgatherv].calls);
                CHECK_THROWS_AS(f.update_charges(std::vector<double>(q.size() + 1)), Error);
            });
    CHECK(same == first);
    for (std::size_t i = 0; i < first.size(); ++i)
        CHECK(doubled[i] == doctest::Approx(2 * first[i]).epsilon(1e-12));
    CHECK(relative_l2_error(updated, expected) <= 1e-12);
}

TEST_CASE("ghosts are exactly the remote boxes the local boxes interact with")
{
    for (auto [p, dg, dl] : {std::tuple{8, 1, 2}, std::tuple{64, 2, 2}})
    {
        // clustered input leaves many boxes empty
        std::vector<Point3> pts = generate_points(Distribution::sphere_surface, 5000, 17);
        for (auto& q : pts)
            q = {0.5 + 0.45 * q.x, 0.5 + 0.45 * q.y, 0.5 + 0.45 * q.z};
        World w{p, pts, generate_charges(pts.size(), 17)};
        auto cfg = config(dg, dl, 2);
        const int depth = dg + dl;

        std::mutex m;
        onRanks(w, cfg,
                [&](Communicator& c, DistributedFmm<double>& f)
                {
                    const auto& t = f.tree();
                    std::set<MortonKey> occupied; // boxes holding any point anywhere
                    for (const auto& q : w.points)
                        for (int l = dg; l <= depth; ++l)
                            occupied.insert(encode(q, l, f.cube()));

                    std::set<MortonKey> wantLeaf, wantUp;
                    auto leaves = t.leaves();
                    for (std::size_t i = 0; i < leaves.size(); ++i)
                        if (t.pointCount(depth, i) > 0)
                            for (auto k : u_list(leaves[i]))
                                if (!t.contains(k) && occupied.count(k)) { wantLeaf.insert(k); }
                    for (int l = std::max(2, dg + 1); l <= depth; ++l)
                    {
                        auto boxes = t.boxes(l);
                        for (std::size_t i = 0; i < boxes.size(); ++i)
                            if (t.pointCount(l, i) > 0)
                                for (auto k : v_list(boxes[i]))
                                    if (!t.contains(k) && occupied.count(k)) { wantUp.insert(k); }
                    }
                    auto leafKeys = f.ghosts().leafGhostKeys();
                    auto upKeys   = f.ghosts().upGhostKeys();
                    std::lock_guard lock(m);
                    CHECK(std::set<MortonKey>(leafKeys.begin(), leafKeys.end()) == wantLeaf);
                    CHECK(std::set<MortonKey>(upKeys.begin(), upKeys.end()) == wantUp);

                    // ghost point counts match the owners' boxes
                    std::size_t points = 0;
                    for (auto k : leafKeys)
                    {
                        auto src = f.ghosts().leaf(k);
                        REQUIRE(src.has_value());
                        CHECK(src->points.size() ==
                              static_cast<std::size_t>(std::count_if(w.points.begin(), w.points.end(),
                                                                     [&](const Point3& q) { return encode(q, depth, f.cube()) == k; })));
                        points += src->points.size();
                    }
                    CHECK(points == f.ghosts().numGhostPoints());

                    // every local point lies in a local root
                    for (const auto& q : f.points())
                        CHECK(f.layout().owner(encode(q, depth, f.cube())) == c.rank());
                });
    }
}

TEST_CASE("a missing ghost is reported, not silently ignored")
{
    auto w = uniformWorld(8, 4096, 19);
    SUBCASE("far field")
    {
        auto msg = messageOf(
            [&]
            {
                onRanks(w, config(1, 2, 3),
                        [](Communicator& c, DistributedFmm<double>& f)
                        {
                            if (c.rank() == 0)
                            {
                                auto keys = f.ghosts().upGhostKeys();
                                REQUIRE_FALSE(keys.empty());
                                CHECK(f.ghosts().drop(keys.front()));
                                CHECK_THROWS_AS(f.ghosts().up(keys.front()), Error);
                            }
                            f.evaluate();
                        });
            });
        CHECK(msg.find("unresolved dependency") != std::string::npos);
    }
    SUBCASE("near field")
    {
        auto msg = messageOf(
            [&]
            {
                onRanks(w, config(1, 2, 3),
                        [](Communicator& c, DistributedFmm<double>& f)
                        {
                            if (c.rank() == 0) { f.ghosts().drop(f.ghosts().leafGhostKeys().front()); }
                            f.evaluate();
                        });
            });
        CHECK(msg.find("unresolved dependency") != std::string::npos);
    }
}

TEST_CASE("single precision")
{
    auto w = uniformWorld(8, 4096, 23);
    RunConfig rc;
    rc.p = 8, rc.n = w.points.size(), rc.localDepth = 2, rc.order = 4, rc.precision = Precision::f32;
    auto ref = run_reference(rc, w.points, w.charges);
    std::vector<double> got(w.points.size());
    onRanks<float>(w, config(1, 2, 4),
                   [&](Communicator& c, DistributedFmm<float>& f)
                   {
                       auto e = f.evaluate();
                       for (std::size_t i = 0; i < e.potentials.size(); ++i)
                           got[f.ids()[i]] = e.potentials[i];
                       if (c.rank() != 0)
                       {
                           CHECK(e.stats[CollectiveKind::gatherv].bytesSent ==
                                 global_message_size(f.tree().roots().size(), 4, 32));
                       }
                   });
    CHECK(relative_l2_error(got, ref) <= 1e-5);
}
