#include "dfmm/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "dfmm/kernels.hpp"

namespace dfmm
{

std::string to_string(Distribution d) { return d == Distribution::uniform_cube ? "uniform_cube" : "sphere_surface"; }
std::string to_string(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }
std::string to_string(SweepMode m) { return m == SweepMode::weak ? "weak" : "strong"; }

Distribution parse_distribution(const std::string& s)
{
    if (s == "uniform_cube" || s == "uniform") { return Distribution::uniform_cube; }
    if (s == "sphere_surface" || s == "sphere") { return Distribution::sphere_surface; }
    throw Error("unknown distribution '" + s + "' (expected uniform_cube or sphere_surface)");
}

Precision parse_precision(const std::string& s)
{
    if (s == "f32" || s == "32") { return Precision::f32; }
    if (s == "f64" || s == "64") { return Precision::f64; }
    throw Error("unknown precision '" + s + "' (expected f32 or f64)");
}

SweepMode parse_sweep_mode(const std::string& s)
{
    if (s == "weak") { return SweepMode::weak; }
    if (s == "strong") { return SweepMode::strong; }
    throw Error("unknown sweep mode '" + s + "' (expected weak or strong)");
}

int precision_bits(Precision p) { return p == Precision::f32 ? 32 : 64; }

namespace
{

std::mt19937_64 stream(std::uint64_t seed, std::uint32_t purpose)
{
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), purpose};
    return std::mt19937_64(seq);
}

constexpr char kPointMagic[8]  = {'F', 'M', 'M', 'P', 'T', 'S', '1', '\0'};
constexpr char kChargeMagic[8] = {'F', 'M', 'M', 'C', 'H', 'G', '1', '\0'};

std::ofstream openOut(const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) { throw Error("cannot open " + path.string() + " for writing"); }
    return out;
}

std::ifstream openIn(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) { throw Error("cannot open " + path.string()); }
    return in;
}

template<class T>
void put(std::ofstream& out, const T& v)
{
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template<class T>
T get(std::ifstream& in, const std::filesystem::path& path)
{
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) { throw Error("truncated file " + path.string()); }
    return v;
}

void readMagic(std::ifstream& in, const char (&magic)[8], const std::filesystem::path& path)
{
    char buf[8];
    if (!in.read(buf, 8) || std::memcmp(buf, magic, 8) != 0) { throw Error(path.string() + " has a bad magic header"); }
}

} // namespace

std::vector<Point3> generate_points(Distribution d, std::size_t n, std::uint64_t seed)
{
    if (n == 0) { throw Error("point count must be positive"); }
    auto rng = stream(seed, 0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<Point3> out(n);
    for (auto& p : out)
    {
        if (d == Distribution::uniform_cube) { p = {unit(rng), unit(rng), unit(rng)}; }
        else
        {
            // Archimedes: z uniform on [-1, 1] gives equal area per band
            const double z   = 2 * unit(rng) - 1;
            const double phi = 2 * std::numbers::pi * unit(rng);
            const double r   = std::sqrt(std::max(0.0, 1 - z * z));
            p                = {r * std::cos(phi), r * std::sin(phi), z};
        }
    }
    return out;
}

std::vector<double> generate_charges(std::size_t n, std::uint64_t seed)
{
    auto rng = stream(seed, 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<double> out(n);
    for (auto& q : out)
        q = unit(rng);
    return out;
}

void write_points(const std::filesystem::path& path, const std::vector<Point3>& points, Precision precision)
{
    auto out = openOut(path);
    out.write(kPointMagic, 8);
    put(out, static_cast<std::uint64_t>(points.size()));
    put(out, static_cast<std::uint32_t>(precision_bits(precision)));
    for (const auto& p : points)
    {
        if (precision == Precision::f32)
        {
            put(out, static_cast<float>(p.x));
            put(out, static_cast<float>(p.y));
            put(out, static_cast<float>(p.z));
        }
        else
        {
            put(out, p.x);
            put(out, p.y);
            put(out, p.z);
        }
    }
    if (!out) { throw Error("failed writing " + path.string()); }
}

std::vector<Point3> read_points(const std::filesystem::path& path)
{
    auto in = openIn(path);
    readMagic(in, kPointMagic, path);
    auto count = get<std::uint64_t>(in, path);
    auto bits  = get<std::uint32_t>(in, path);
    if (bits != 32 && bits != 64) { throw Error(path.string() + " declares unsupported precision " + std::to_string(bits)); }
    std::vector<Point3> out(count);
    for (auto& p : out)
    {
        if (bits == 32) { p = {get<float>(in, path), get<float>(in, path), get<float>(in, path)}; }
        else { p = {get<double>(in, path), get<double>(in, path), get<double>(in, path)}; }
    }
    return out;
}

void write_charges(const std::filesystem::path& path, const std::vector<double>& charges)
{
    auto out = openOut(path);
    out.write(kChargeMagic, 8);
    put(out, static_cast<std::uint64_t>(charges.size()));
    out.write(reinterpret_cast<const char*>(charges.data()), static_cast<std::streamsize>(charges.size() * sizeof(double)));
    if (!out) { throw Error("failed writing " + path.string()); }
}

std::vector<double> read_charges(const std::filesystem::path& path)
{
    auto in = openIn(path);
    readMagic(in, kChargeMagic, path);
    std::vector<double> out(get<std::uint64_t>(in, path));
    for (auto& q : out)
        q = get<double>(in, path);
    return out;
}

void write_potentials(const std::filesystem::path& path, const std::vector<double>& potentials)
{
    auto out = openOut(path);
    out.write(reinterpret_cast<const char*>(potentials.data()), static_cast<std::streamsize>(potentials.size() * sizeof(double)));
    if (!out) { throw Error("failed writing " + path.string()); }
}

FmmConfig RunConfig::fmm() const
{
    FmmConfig c;
    c.globalDepth      = globalDepth;
    c.localDepth       = localDepth;
    c.order            = order;
    c.seed             = seed;
    c.overlapNearField = overlapNearField;
    c.rootPolicy       = rootPolicy;
    return c;
}

namespace
{

struct EpsilonEntry
{
    int order;
    double f64;
    double f32;
};

// Frozen from oracle runs (uniform cube and sphere surface, 2000 to 8192 points, depths 2 and 3)
// at roughly five times the worst measured error. Single precision levels off near 1e-4.
constexpr EpsilonEntry kEpsilon[] = {
    {2, 5e-2, 5e-2}, {3, 1e-3, 1e-3}, {4, 2e-4, 5e-4}, {5, 1e-5, 1e-3},
    {6, 2e-6, 1e-3}, {7, 1e-7, 1e-3}, {8, 5e-8, 2e-3},
};

} // namespace

double epsilon_bound(int order, Precision precision)
{
    for (const auto& e : kEpsilon)
    {
        if (e.order == order) { return precision == Precision::f64 ? e.f64 : e.f32; }
    }
    throw Error("no frozen error bound for expansion order " + std::to_string(order));
}

std::vector<int> epsilon_orders()
{
    std::vector<int> out;
    for (const auto& e : kEpsilon)
        out.push_back(e.order);
    return out;
}

double agreement_tolerance(Precision precision) { return precision == Precision::f64 ? 1e-10 : 1e-5; }

std::optional<int> octal_depth(int p)
{
    int d = 0;
    for (long long v = 1; v <= p; v *= 8, ++d)
    {
        if (v == p) { return d; }
    }
    return std::nullopt;
}

namespace
{

template<class Real>
DistributedRun runDistributed(const RunConfig& cfg, const std::vector<Point3>& points, const std::vector<double>& charges)
{
    if (points.size() != charges.size()) { throw Error("charge count does not match point count"); }
    if (cfg.p < 1) { throw Error("rank count must be at least 1"); }
    const std::size_t n = points.size();
    const int p         = cfg.p;
    SimWorld world(p, cfg.seed, Clock(cfg.timings));

    DistributedRun run;
    run.potentials.assign(n, 0.0);
    run.ranks.resize(p);
    std::vector<Splitters> splitters(p);
    std::vector<std::uint64_t> digests(p);
    std::vector<BoundingCube> cubes(p);

    world.run(
        [&](Communicator& comm)
        {
            const int r       = comm.rank();
            const std::size_t lo = n * r / p, hi = n * (r + 1) / p;
            std::vector<std::uint64_t> ids(hi - lo);
            std::iota(ids.begin(), ids.end(), lo);
            DistributedFmm<Real> fmm(comm, std::span(points).subspan(lo, hi - lo),
                                     std::span(charges).subspan(lo, hi - lo), ids, cfg.fmm(), Clock(cfg.timings));
            if (cfg.dropGhost && r == 0)
            {
                auto keys = fmm.ghosts().upGhostKeys();
                if (keys.empty()) { keys = fmm.ghosts().leafGhostKeys(); }
                if (keys.empty()) { throw Error("fault injection requested but rank 0 holds no ghosts"); }
                fmm.ghosts().drop(keys.front());
            }
            auto result = fmm.evaluate();

            auto local = fmm.ids();
            for (std::size_t i = 0; i < local.size(); ++i)
            {
                run.potentials[local[i]] = static_cast<double>(result.potentials[i]);
            }
            auto& rep          = run.ranks[r];
            rep.rank           = r;
            rep.points         = fmm.points().size();
            rep.roots          = fmm.tree().roots().size();
            rep.uDegree        = fmm.uGraph().degree();
            rep.vDegree        = fmm.vGraph().degree();
            rep.uGhostBoxes    = fmm.ghosts().numLeafGhosts();
            rep.vGhostBoxes    = fmm.ghosts().numUpGhosts();
            rep.ghostPoints    = fmm.ghosts().numGhostPoints();
            rep.setupStats     = fmm.setupStats();
            rep.runtimeStats   = result.stats;
            rep.setupTimings   = fmm.setupTimings();
            rep.runtimeTimings = result.timings;
            splitters[r]       = fmm.splitters();
            digests[r]         = fmm.layout().digest();
            cubes[r]           = fmm.cube();
        });

    for (int r = 1; r < p; ++r)
    {
        if (digests[r] != digests[0] || splitters[r] != splitters[0]) { throw Error("ranks disagree on the layout"); }
    }
    run.splitters    = splitters[0];
    run.layoutDigest = digests[0];
    run.cube         = cubes[0];
    return run;
}

template<class Real>
std::vector<double> runReference(const RunConfig& cfg, const std::vector<Point3>& points, const std::vector<double>& charges)
{
    if (points.size() != charges.size()) { throw Error("charge count does not match point count"); }
    auto cube = fit_domain(points);
    std::vector<Particle> all(points.size());
    for (std::size_t i = 0; i < points.size(); ++i)
    {
        all[i] = {points[i], charges[i], i, encode(points[i], kMaxDepth, cube)};
    }
    std::sort(all.begin(), all.end(), particle_less);
    std::vector<Point3> sorted(all.size());
    std::vector<Real> q(all.size());
    for (std::size_t i = 0; i < all.size(); ++i)
    {
        sorted[i] = all[i].position;
        q[i]      = static_cast<Real>(all[i].charge);
    }
    auto f = reference_fmm<Real>(sorted, q, cube, cfg.globalDepth + cfg.localDepth, *shared_operators<Real>(cfg.order));
    std::vector<double> out(points.size());
    for (std::size_t i = 0; i < all.size(); ++i)
    {
        out[all[i].id] = static_cast<double>(f[i]);
    }
    return out;
}

} // namespace

DistributedRun run_distributed(const RunConfig& cfg, const std::vector<Point3>& points, const std::vector<double>& charges)
{
    return cfg.precision == Precision::f64 ? runDistributed<double>(cfg, points, charges)
                                           : runDistributed<float>(cfg, points, charges);
}

std::vector<double> run_reference(const RunConfig& cfg, const std::vector<Point3>& points, const std::vector<double>& charges)
{
    return cfg.precision == Precision::f64 ? runReference<double>(cfg, points, charges)
                                           : runReference<float>(cfg, points, charges);
}

std::vector<double> run_direct(const std::vector<Point3>& points, const std::vector<double>& charges)
{
    return direct_sum<double>(points, points, charges);
}

VerifyReport verify(const RunConfig& cfg, const std::vector<Point3>& points, const std::vector<double>& charges)
{
    VerifyReport rep;
    rep.tolerance = agreement_tolerance(cfg.precision);
    rep.epsilon   = epsilon_bound(cfg.order, cfg.precision);
    rep.run       = run_distributed(cfg, points, charges);
    auto ref      = run_reference(cfg, points, charges);
    rep.distributedVsReference = relative_l2_error(rep.run.potentials, ref);
    if (points.size() <= kVerifyDirectCap) { rep.referenceVsDirect = relative_l2_error(ref, run_direct(points, charges)); }
    rep.passed = rep.distributedVsReference <= rep.tolerance && (!rep.referenceVsDirect || *rep.referenceVsDirect <= rep.epsilon);
    return rep;
}

namespace
{

std::string num(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

constexpr CollectiveKind kRuntimeKinds[] = {CollectiveKind::neighbor_alltoallv, CollectiveKind::gatherv,
                                            CollectiveKind::scatterv};

double setupTotal(const SetupTimings& s)
{
    return s.sortAndTree + s.layoutExchange + s.graphConstruction + s.uQueryExchange + s.vQueryBuffers;
}

} // namespace

std::string stats_csv_header()
{
    std::string h = "p,repeat,rank,points,roots,u_degree,v_degree,u_ghost_boxes,v_ghost_boxes,ghost_points,"
                    "setup_sort_tree_s,setup_layout_s,setup_graphs_s,setup_u_exchange_s,setup_v_buffers_s,"
                    "setup_allgatherv_bytes,setup_alltoallv_bytes,setup_neighbor_alltoallv_bytes,"
                    "rt_total_s,rt_computation_s,rt_neighbor_alltoallv_s,rt_gatherv_s,rt_scatterv_s,rt_global_stage_s";
    for (auto k : kRuntimeKinds)
    {
        std::string n(to_string(k));
        h += ",rt_" + n + "_calls,rt_" + n + "_messages,rt_" + n + "_bytes_sent,rt_" + n + "_bytes_received";
    }
    return h + ",rel_error\n";
}

std::string stats_csv_rows(const DistributedRun& run, int p, int repeat, std::optional<double> error)
{
    std::ostringstream os;
    for (const auto& r : run.ranks)
    {
        const auto& st = r.setupTimings;
        const auto& rt = r.runtimeTimings;
        os << p << ',' << repeat << ',' << r.rank << ',' << r.points << ',' << r.roots << ',' << r.uDegree << ','
           << r.vDegree << ',' << r.uGhostBoxes << ',' << r.vGhostBoxes << ',' << r.ghostPoints << ','
           << num(st.sortAndTree) << ',' << num(st.layoutExchange) << ',' << num(st.graphConstruction) << ','
           << num(st.uQueryExchange) << ',' << num(st.vQueryBuffers) << ','
           << r.setupStats[CollectiveKind::allgatherv].bytesSent << ','
           << r.setupStats[CollectiveKind::alltoallv].bytesSent << ','
           << r.setupStats[CollectiveKind::neighbor_alltoallv].bytesSent << ',' << num(rt.total) << ','
           << num(rt.computation) << ',' << num(rt.neighborAlltoallv) << ',' << num(rt.gatherv) << ','
           << num(rt.scatterv) << ',' << num(rt.globalStage);
        for (auto k : kRuntimeKinds)
        {
            const auto& c = r.runtimeStats[k];
            os << ',' << c.calls << ',' << c.messagesSent << ',' << c.bytesSent << ',' << c.bytesReceived;
        }
        os << ',' << (error ? num(*error) : std::string()) << '\n';
    }
    return os.str();
}

std::vector<SweepGroup> sweep(const RunConfig& base, const std::vector<int>& ranks, SweepMode mode)
{
    if (base.repeats < 1) { throw Error("repeats must be at least 1"); }
    std::vector<SweepGroup> groups;
    for (int p : ranks)
    {
        auto depth = octal_depth(p);
        if (!depth || *depth < 1) { throw Error("infeasible config: P=" + std::to_string(p) + " is not 8^d with d >= 1"); }
        SweepGroup g;
        g.p           = p;
        g.globalDepth = *depth;
        g.n           = mode == SweepMode::weak ? base.n * static_cast<std::size_t>(p) : base.n;
        RunConfig cfg = base;
        cfg.p         = p;
        cfg.n         = g.n;
        cfg.globalDepth = *depth;
        auto points   = generate_points(cfg.distribution, cfg.n, cfg.seed);
        auto charges  = generate_charges(cfg.n, cfg.seed);
        for (int rep = 0; rep < base.repeats; ++rep)
        {
            g.repeats.push_back(run_distributed(cfg, points, charges));
        }
        groups.push_back(std::move(g));
    }
    return groups;
}

std::string sweep_summary_csv(const std::vector<SweepGroup>& groups)
{
    struct Metric
    {
        const char* name;
        double (*value)(const RankReport&);
    };
    static const Metric metrics[] = {
        {"setup_s", [](const RankReport& r) { return setupTotal(r.setupTimings); }},
        {"rt_total_s", [](const RankReport& r) { return r.runtimeTimings.total; }},
        {"rt_computation_s", [](const RankReport& r) { return r.runtimeTimings.computation; }},
        {"rt_neighbor_alltoallv_s", [](const RankReport& r) { return r.runtimeTimings.neighborAlltoallv; }},
        {"rt_gatherv_s", [](const RankReport& r) { return r.runtimeTimings.gatherv; }},
        {"rt_scatterv_s", [](const RankReport& r) { return r.runtimeTimings.scatterv; }},
        {"rt_global_stage_s", [](const RankReport& r) { return r.runtimeTimings.globalStage; }},
    };

    std::ostringstream os;
    os << "p,global_depth,n,repeats,max_u_degree,max_v_degree,min_points,max_points";
    for (const auto& m : metrics)
        os << ',' << m.name << "_mean," << m.name << "_std";
    os << '\n';
    for (const auto& g : groups)
    {
        std::size_t uDeg = 0, vDeg = 0, minPts = SIZE_MAX, maxPts = 0;
        for (const auto& run : g.repeats)
            for (const auto& r : run.ranks)
            {
                uDeg   = std::max(uDeg, r.uDegree);
                vDeg   = std::max(vDeg, r.vDegree);
                minPts = std::min(minPts, r.points);
                maxPts = std::max(maxPts, r.points);
            }
        os << g.p << ',' << g.globalDepth << ',' << g.n << ',' << g.repeats.size() << ',' << uDeg << ',' << vDeg << ','
           << minPts << ',' << maxPts;
        for (const auto& m : metrics)
        {
            std::vector<double> samples;
            for (const auto& run : g.repeats)
            {
                double worst = 0;
                for (const auto& r : run.ranks)
                    worst = std::max(worst, m.value(r));
                samples.push_back(worst);
            }
            const double mean = std::accumulate(samples.begin(), samples.end(), 0.0) / static_cast<double>(samples.size());
            double var        = 0;
            for (double s : samples)
                var += (s - mean) * (s - mean);
            const double sd = samples.size() > 1 ? std::sqrt(var / static_cast<double>(samples.size() - 1)) : 0.0;
            os << ',' << num(mean) << ',' << num(sd);
        }
        os << '\n';
    }
    return os.str();
}

std::string manifest_json(const RunConfig& cfg, const std::string& command, const std::vector<const DistributedRun*>& runs,
                          const std::optional<VerifyReport>& report)
{
    using nlohmann::ordered_json;
    ordered_json j;
    j["tool"]    = "fmm";
    j["command"] = command;
    j["config"]  = {
        {"distribution", to_string(cfg.distribution)},
        {"n", cfg.n},
        {"p", cfg.p},
        {"global_depth", cfg.globalDepth},
        {"local_depth", cfg.localDepth},
        {"order", cfg.order},
        {"expansion_length", expansion_length(cfg.order)},
        {"precision", to_string(cfg.precision)},
        {"repeats", cfg.repeats},
        {"root_policy", cfg.rootPolicy == RootPolicy::contiguous ? "contiguous" : "sampled"},
        {"overlap_near_field", cfg.overlapNearField},
        {"timings", cfg.timings},
    };
    j["seed"]         = cfg.seed;
    j["backend"]      = selected_backend();
    j["sampler"]      = kSamplerId;
    j["nominated_rank"] = kNominatedRank;
    SurfaceScales scales;
    j["operators"] = {
        {"kernel", "laplace 1/r"},
        {"svd_cutoff", cfg.precision == Precision::f64 ? default_svd_cutoff<double>() : default_svd_cutoff<float>()},
        {"up_equivalent_scale", scales.upEquivalent},
        {"up_check_scale", scales.upCheck},
        {"down_equivalent_scale", scales.downEquivalent},
        {"down_check_scale", scales.downCheck},
    };
    ordered_json eps = ordered_json::object();
    for (int o : epsilon_orders())
        eps[std::to_string(o)] = epsilon_bound(o, cfg.precision);
    j["epsilon_table"] = eps;

    ordered_json arr = ordered_json::array();
    for (const auto* run : runs)
    {
        ordered_json r;
        r["p"] = run->ranks.size();
        ordered_json sp = ordered_json::array();
        for (auto s : run->splitters)
            sp.push_back(to_string(s));
        r["splitters"] = sp;
        char digest[24];
        std::snprintf(digest, sizeof digest, "%016llx", static_cast<unsigned long long>(run->layoutDigest));
        r["layout_digest"] = digest;
        r["cube"]          = {{"origin", {run->cube.origin.x, run->cube.origin.y, run->cube.origin.z}}, {"side", run->cube.side}};
        SetupTimings s{};
        RuntimeTimings t{};
        for (const auto& rk : run->ranks)
        {
            s.sortAndTree       = std::max(s.sortAndTree, rk.setupTimings.sortAndTree);
            s.layoutExchange    = std::max(s.layoutExchange, rk.setupTimings.layoutExchange);
            s.graphConstruction = std::max(s.graphConstruction, rk.setupTimings.graphConstruction);
            s.uQueryExchange    = std::max(s.uQueryExchange, rk.setupTimings.uQueryExchange);
            s.vQueryBuffers     = std::max(s.vQueryBuffers, rk.setupTimings.vQueryBuffers);
            t.total             = std::max(t.total, rk.runtimeTimings.total);
            t.computation       = std::max(t.computation, rk.runtimeTimings.computation);
            t.neighborAlltoallv = std::max(t.neighborAlltoallv, rk.runtimeTimings.neighborAlltoallv);
            t.gatherv           = std::max(t.gatherv, rk.runtimeTimings.gatherv);
            t.scatterv          = std::max(t.scatterv, rk.runtimeTimings.scatterv);
            t.globalStage       = std::max(t.globalStage, rk.runtimeTimings.globalStage);
        }
        r["setup_timings_max_s"] = {
            {"sort_and_tree", s.sortAndTree},       {"layout_exchange", s.layoutExchange},
            {"graph_construction", s.graphConstruction}, {"u_query_exchange", s.uQueryExchange},
            {"v_query_buffers", s.vQueryBuffers},
        };
        r["runtime_timings_max_s"] = {
            {"total", t.total},     {"computation", t.computation}, {"neighbor_alltoallv", t.neighborAlltoallv},
            {"gatherv", t.gatherv}, {"scatterv", t.scatterv},       {"global_stage", t.globalStage},
        };
        arr.push_back(r);
    }
    j["runs"] = arr;

    if (report)
    {
        ordered_json v;
        v["distributed_vs_reference"] = report->distributedVsReference;
        v["tolerance"]                = report->tolerance;
        if (report->referenceVsDirect) { v["reference_vs_direct"] = *report->referenceVsDirect; }
        else { v["reference_vs_direct"] = nullptr; }
        v["epsilon"] = report->epsilon;
        v["passed"]  = report->passed;
        j["verify"]  = v;
    }
    return j.dump(2) + "\n";
}

} // namespace dfmm
