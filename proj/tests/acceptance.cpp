// Acceptance driver: one PASS/FAIL line per criterion, non-zero exit if any fails.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "dfmm/bench.hpp"
#include "dfmm/kernels.hpp"

using namespace dfmm;

namespace
{

struct Outcome
{
    bool pass{false};
    std::string detail;
};

double seconds(std::chrono::steady_clock::time_point since)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - since).count();
}

std::string fmt(const char* f, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

RunConfig baseConfig()
{
    RunConfig c;
    c.n           = 4096;
    c.p           = 8;
    c.globalDepth = 1;
    c.localDepth  = 2;
    c.order       = 6;
    c.timings     = false;
    return c;
}

struct SetupView
{
    LatticeCoord root;
    std::size_t vGhosts{0};
};

// Setup only, one root per rank; degrees and ghost counts are fixed once setup completes.
std::vector<SetupView> setupOnly(int p, int dg, int dl, std::size_t perRank, std::uint64_t seed)
{
    const std::size_t n = perRank * p;
    auto points         = generate_points(Distribution::uniform_cube, n, seed);
    auto charges        = generate_charges(n, seed);
    std::vector<SetupView> out(p);
    FmmConfig cfg;
    cfg.globalDepth = dg;
    cfg.localDepth  = dl;
    cfg.order       = 2;
    cfg.seed        = seed;
    SimWorld world(p, seed, Clock(false));
    world.run(
        [&](Communicator& c)
        {
            const std::size_t lo = n * c.rank() / p, hi = n * (c.rank() + 1) / p;
            std::vector<std::uint64_t> ids(hi - lo);
            std::iota(ids.begin(), ids.end(), lo);
            DistributedFmm<double> f(c, std::span(points).subspan(lo, hi - lo), std::span(charges).subspan(lo, hi - lo),
                                     ids, cfg, Clock(false));
            if (f.tree().roots().size() != 1) { throw Error("expected one root per rank"); }
            out[c.rank()] = {f.tree().roots()[0].lattice(), f.ghosts().numUpGhosts()};
        });
    return out;
}

bool interior(LatticeCoord c, std::int64_t side)
{
    return std::min({c.x, c.y, c.z}) >= 1 && std::max({c.x, c.y, c.z}) <= side - 2;
}

bool corner(LatticeCoord c, std::int64_t side)
{
    auto edge = [&](std::int64_t v) { return v == 0 || v == side - 1; };
    return edge(c.x) && edge(c.y) && edge(c.z);
}

Outcome oracleCorrectness()
{
    auto t0  = std::chrono::steady_clock::now();
    auto cfg = baseConfig();
    auto pts = generate_points(cfg.distribution, cfg.n, cfg.seed);
    auto q   = generate_charges(cfg.n, cfg.seed);
    auto rep = verify(cfg, pts, q);
    const double t = seconds(t0);
    const bool ok  = rep.passed && rep.referenceVsDirect && t < 30;
    return {ok, fmt("distributed vs reference %.3e (<= 1e-10), reference vs direct %.3e (<= %.1e), %.1f s", rep.distributedVsReference,
                    rep.referenceVsDirect.value_or(-1), rep.epsilon, t)};
}

Outcome convergence()
{
    auto t0 = std::chrono::steady_clock::now();
    RunConfig cfg = baseConfig();
    cfg.n         = 2000;
    cfg.p         = 1;
    auto pts      = generate_points(cfg.distribution, cfg.n, 7);
    auto q        = generate_charges(cfg.n, 7);
    auto exact    = run_direct(pts, q);
    std::string detail;
    bool ok         = true;
    double previous = INFINITY;
    for (int order : {2, 4, 6, 8})
    {
        cfg.order = order;
        double e  = relative_l2_error(run_reference(cfg, pts, q), exact);
        ok        = ok && e < previous;
        previous  = e;
        detail += fmt("order %d: %.3e; ", order, e);
    }
    const double t = seconds(t0);
    return {ok && t < 60, detail + fmt("%.1f s", t)};
}

Outcome expansionLength()
{
    bool ok = expansion_length(2) == 8 && expansion_length(3) == 26 && expansion_length(6) == 152 &&
              global_message_size(1, 3, 32) == 104;
    // measured on the wire: one root per rank, order 3, single precision
    auto cfg      = baseConfig();
    cfg.order     = 3;
    cfg.precision = Precision::f32;
    auto pts      = generate_points(cfg.distribution, cfg.n, cfg.seed);
    auto run      = run_distributed(cfg, pts, generate_charges(cfg.n, cfg.seed));
    std::set<std::uint64_t> sent;
    for (const auto& r : run.ranks)
        if (r.rank != kNominatedRank) { sent.insert(r.runtimeStats[CollectiveKind::gatherv].bytesSent); }
    ok = ok && sent == std::set<std::uint64_t>{104};
    return {ok, fmt("lengths %zu/%zu/%zu, gatherv payload %llu bytes per rank", expansion_length(2), expansion_length(3),
                    expansion_length(6), static_cast<unsigned long long>(sent.empty() ? 0 : *sent.begin()))};
}

Outcome neighborBound()
{
    auto t0 = std::chrono::steady_clock::now();
    bool ok = true;
    std::string detail;
    for (int dg : {1, 2, 3})
    {
        // full setup and evaluation, one root per rank
        RunConfig cfg   = baseConfig();
        cfg.p           = 1 << (3 * dg);
        cfg.globalDepth = dg;
        cfg.localDepth  = 1;
        cfg.order       = 2;
        cfg.n           = 512 * static_cast<std::size_t>(cfg.p);
        auto pts        = generate_points(cfg.distribution, cfg.n, cfg.seed);
        auto run        = run_distributed(cfg, pts, generate_charges(cfg.n, cfg.seed));
        const std::int64_t side = std::int64_t{1} << dg;
        std::size_t maxU = 0, maxV = 0, interiorRanks = 0, interiorAt26 = 0;
        for (const auto& r : run.ranks)
        {
            maxU = std::max(maxU, r.uDegree);
            maxV = std::max(maxV, r.vDegree);
            // contiguous runs with one root per rank: rank r owns root r
            if (r.roots != 1) { ok = false; }
            if (interior(MortonKey::fromMortonIndex(r.rank, dg).lattice(), side))
            {
                ++interiorRanks;
                interiorAt26 += r.uDegree == 26 && r.vDegree == 26;
            }
        }
        ok = ok && maxU <= 26 && maxV <= 26;
        if (cfg.p == 512) { ok = ok && interiorRanks > 0 && interiorAt26 == interiorRanks; }
        detail += fmt("P=%d max U %zu max V %zu interior at 26: %zu/%zu; ", cfg.p, maxU, maxV, interiorAt26, interiorRanks);
    }
    const double t = seconds(t0);
    return {ok && t < 120, detail + fmt("%.1f s", t)};
}

Outcome collectiveSchedule()
{
    std::string detail;
    bool ok = true;
    auto check = [&](RunConfig cfg, const char* label)
    {
        auto pts = generate_points(cfg.distribution, cfg.n, cfg.seed);
        auto run = run_distributed(cfg, pts, generate_charges(cfg.n, cfg.seed));
        bool good = true;
        for (const auto& r : run.ranks)
        {
            const auto& s = r.runtimeStats;
            good = good && s[CollectiveKind::neighbor_alltoallv].calls == 1 && s[CollectiveKind::gatherv].calls == 1 &&
                   s[CollectiveKind::scatterv].calls == 1 && s[CollectiveKind::allgatherv].calls == 0 &&
                   s[CollectiveKind::alltoallv].calls == 0;
        }
        ok = ok && good;
        detail += fmt("%s %s; ", label, good ? "1/1/1" : "mismatch");
    };
    auto cfg = baseConfig();
    cfg.order = 4;
    check(cfg, "P=8");
    cfg.p = 1;
    check(cfg, "P=1");
    cfg.p           = 64;
    cfg.globalDepth = 2;
    cfg.localDepth  = 1;
    cfg.rootPolicy  = RootPolicy::sampled;
    cfg.n           = 64 * 256;
    check(cfg, "P=64 sampled");
    return {ok, detail};
}

Outcome surfaceScaling()
{
    auto t0 = std::chrono::steady_clock::now();
    std::map<int, std::set<std::size_t>> interiorCounts, cornerCounts;
    for (int dg : {1, 2, 3})
    {
        const int p             = 1 << (3 * dg);
        const std::int64_t side = std::int64_t{1} << dg;
        for (const auto& v : setupOnly(p, dg, 2, 4096, 200 + dg))
        {
            if (interior(v.root, side)) { interiorCounts[p].insert(v.vGhosts); }
            if (corner(v.root, side)) { cornerCounts[p].insert(v.vGhosts); }
        }
    }
    auto single = [](const std::set<std::size_t>& s) { return s.size() == 1; };
    bool ok = interiorCounts[8].empty() && single(interiorCounts[64]) && interiorCounts[64] == interiorCounts[512];
    ok      = ok && single(cornerCounts[8]) && cornerCounts[8] == cornerCounts[64] && cornerCounts[8] == cornerCounts[512];
    auto show = [](const std::set<std::size_t>& s)
    {
        std::string out;
        for (auto v : s)
            out += (out.empty() ? "" : "/") + std::to_string(v);
        return out.empty() ? std::string("none") : out;
    };
    return {ok, fmt("interior V ghosts P=8 %s, P=64 %s, P=512 %s; corner P=8 %s, P=64 %s, P=512 %s; %.1f s",
                    show(interiorCounts[8]).c_str(), show(interiorCounts[64]).c_str(), show(interiorCounts[512]).c_str(),
                    show(cornerCounts[8]).c_str(), show(cornerCounts[64]).c_str(), show(cornerCounts[512]).c_str(),
                    seconds(t0))};
}

Outcome sortInvariants()
{
    const std::size_t n = 100000;
    const BoundingCube unit{{0, 0, 0}, 1.0};
    bool ordered       = true;
    double worst       = 0;
    for (int p : {2, 4, 8})
        for (int trial = 0; trial < 20; ++trial)
        {
            const std::uint64_t seed = 1000 * p + trial;
            auto pts                 = generate_points(Distribution::uniform_cube, n, seed);
            std::vector<std::vector<Particle>> out(p);
            SimWorld world(p, seed, Clock(false));
            world.run(
                [&](Communicator& c)
                {
                    const std::size_t lo = n * c.rank() / p, hi = n * (c.rank() + 1) / p;
                    std::vector<Particle> mine;
                    std::vector<MortonKey> keys;
                    for (std::size_t i = lo; i < hi; ++i)
                    {
                        mine.push_back({pts[i], 1.0, i, encode(pts[i], kMaxDepth, unit)});
                        keys.push_back(mine.back().key);
                    }
                    auto s          = sample_splitters(c, keys, 200, seed);
                    out[c.rank()] = redistribute(c, std::move(mine), s);
                });
            std::vector<Particle> all;
            std::size_t biggest = 0;
            for (auto& part : out)
            {
                biggest = std::max(biggest, part.size());
                all.insert(all.end(), part.begin(), part.end());
            }
            ordered = ordered && all.size() == n && std::is_sorted(all.begin(), all.end(), particle_less);
            worst   = std::max(worst, biggest / (static_cast<double>(n) / p));
        }
    return {ordered && worst <= 1.3, fmt("global order %s, worst imbalance %.3f over 60 trials", ordered ? "holds" : "broken", worst)};
}

Outcome listCardinalities()
{
    const int level = 3;
    const std::int64_t side = 8;
    auto cheb = [](LatticeCoord a, LatticeCoord b)
    { return std::max({std::abs(a.x - b.x), std::abs(a.y - b.y), std::abs(a.z - b.z)}); };
    std::vector<MortonKey> all;
    for (std::uint64_t i = 0; i < 512; ++i)
        all.push_back(MortonKey::fromMortonIndex(i, level));

    bool ok = true;
    std::set<std::tuple<std::int64_t, std::int64_t, std::int64_t>> transfers;
    std::size_t interiorU = 0, interiorV = 0;
    for (auto b : all)
    {
        std::vector<MortonKey> u, v;
        for (auto a : all)
        {
            const auto d = cheb(a.lattice(), b.lattice());
            if (d <= 1) { u.push_back(a); }
            else if (cheb(parent(a).lattice(), parent(b).lattice()) <= 1)
            {
                v.push_back(a);
                auto t = a.lattice(), s = b.lattice();
                transfers.insert({t.x - s.x, t.y - s.y, t.z - s.z});
            }
        }
        std::sort(u.begin(), u.end());
        std::sort(v.begin(), v.end());
        ok = ok && u == u_list(b) && v == v_list(b);
        const auto c = b.lattice();
        // interior for the V list means the parent has all 26 colleagues
        if (interior(c, side))
        {
            ok        = ok && u.size() == 27;
            interiorU = u.size();
        }
        if (interior(parent(b).lattice(), side / 2))
        {
            ok        = ok && v.size() == 189;
            interiorV = v.size();
        }
    }
    ok = ok && transfers.size() == 316 && transfers.size() == kNumTransferVectors;
    return {ok, fmt("interior U %zu, interior V %zu, distinct transfer vectors %zu, library lists match brute force: %s",
                    interiorU, interiorV, transfers.size(), ok ? "yes" : "no")};
}

Outcome determinism()
{
    auto once = []
    {
        auto cfg = baseConfig();
        cfg.order = 4;
        auto pts  = generate_points(cfg.distribution, cfg.n, cfg.seed);
        auto rep  = verify(cfg, pts, generate_charges(cfg.n, cfg.seed));
        std::string bytes(reinterpret_cast<const char*>(rep.run.potentials.data()), rep.run.potentials.size() * sizeof(double));
        return std::tuple{bytes, stats_csv_header() + stats_csv_rows(rep.run, cfg.p, 0, rep.referenceVsDirect),
                          manifest_json(cfg, "verify", {&rep.run}, rep)};
    };
    auto [p1, c1, m1] = once();
    auto [p2, c2, m2] = once();
    const bool ok = p1 == p2 && c1 == c2 && m1 == m2;
    return {ok, fmt("potentials %s, stats CSV %s, manifest %s", p1 == p2 ? "identical" : "differ", c1 == c2 ? "identical" : "differ",
                    m1 == m2 ? "identical" : "differ")};
}

Outcome sphereTolerance()
{
    auto t0          = std::chrono::steady_clock::now();
    auto cfg         = baseConfig();
    cfg.distribution = Distribution::sphere_surface;
    cfg.n            = 32768;
    auto pts         = generate_points(cfg.distribution, cfg.n, cfg.seed);
    auto rep         = verify(cfg, pts, generate_charges(cfg.n, cfg.seed));
    std::size_t lo = SIZE_MAX, hi = 0;
    for (const auto& r : rep.run.ranks)
    {
        lo = std::min(lo, r.points);
        hi = std::max(hi, r.points);
    }
    return {rep.passed && rep.referenceVsDirect.has_value(),
            fmt("distributed vs reference %.3e, reference vs direct %.3e, points per rank min %zu max %zu (imbalance %.3f), %.1f s",
                rep.distributedVsReference, rep.referenceVsDirect.value_or(-1), lo, hi, hi / (cfg.n / 8.0), seconds(t0))};
}

} // namespace

int main()
{
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"oracle correctness", oracleCorrectness},
        {"convergence in order", convergence},
        {"expansion length and gather payload", expansionLength},
        {"neighbor bound", neighborBound},
        {"runtime collective schedule", collectiveSchedule},
        {"surface scaling of V ghosts", surfaceScaling},
        {"sort invariants", sortInvariants},
        {"interaction list cardinalities", listCardinalities},
        {"determinism", determinism},
        {"non-uniform input", sphereTolerance},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i)
    {
        Outcome o;
        try
        {
            o = criteria[i].second();
        }
        catch (const std::exception& e)
        {
            o = {false, std::string("error: ") + e.what()};
        }
        failures += !o.pass;
        std::printf("%s %zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str());
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
