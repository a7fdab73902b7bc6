// Command-line front end: fmm generate | verify | sweep

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "dfmm/bench.hpp"

namespace
{

using namespace dfmm;

struct Options
{
    std::string dist{"uniform_cube"};
    std::size_t n{4096};
    std::vector<int> ranks{8};
    int globalDepth{1};
    int localDepth{2};
    int order{6};
    std::string precision{"f64"};
    std::uint64_t seed{42};
    int repeats{1};
    std::string out;
    std::string mode{"weak"};
    std::string rootPolicy{"contiguous"};
    std::string pointsFile;
    std::string chargesFile;
    bool noOverlap{false};
    bool noTimings{false};
    bool injectFault{false};
    bool writeCharges{false};
};

RunConfig toConfig(const Options& o)
{
    RunConfig c;
    c.distribution     = parse_distribution(o.dist);
    c.n                = o.n;
    c.p                = o.ranks.front();
    c.globalDepth      = o.globalDepth;
    c.localDepth       = o.localDepth;
    c.order            = o.order;
    c.precision        = parse_precision(o.precision);
    c.seed             = o.seed;
    c.repeats          = o.repeats;
    c.overlapNearField = !o.noOverlap;
    c.timings          = !o.noTimings;
    c.dropGhost        = o.injectFault;
    if (o.rootPolicy == "contiguous") { c.rootPolicy = RootPolicy::contiguous; }
    else if (o.rootPolicy == "sampled") { c.rootPolicy = RootPolicy::sampled; }
    else { throw Error("unknown root policy '" + o.rootPolicy + "' (expected contiguous or sampled)"); }
    if (c.repeats < 1) { throw Error("repeats must be at least 1"); }
    return c;
}

void writeText(const std::string& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) { throw Error("cannot open " + path + " for writing"); }
    out << text;
    if (!out) { throw Error("failed writing " + path); }
}

int cmdGenerate(const Options& o)
{
    if (o.out.empty()) { throw Error("generate needs --out"); }
    auto cfg    = toConfig(o);
    auto points = generate_points(cfg.distribution, cfg.n, cfg.seed);
    write_points(o.out, points, cfg.precision);
    std::cout << "wrote " << points.size() << ' ' << to_string(cfg.distribution) << " points to " << o.out << '\n';
    if (o.writeCharges)
    {
        write_charges(o.out + ".charges", generate_charges(cfg.n, cfg.seed));
        std::cout << "wrote charges to " << o.out << ".charges\n";
    }
    return 0;
}

int cmdVerify(const Options& o)
{
    auto cfg = toConfig(o);
    std::vector<Point3> points;
    std::vector<double> charges;
    if (!o.pointsFile.empty())
    {
        points  = read_points(o.pointsFile);
        charges = o.chargesFile.empty() ? generate_charges(points.size(), cfg.seed) : read_charges(o.chargesFile);
        cfg.n   = points.size();
    }
    else
    {
        points  = generate_points(cfg.distribution, cfg.n, cfg.seed);
        charges = generate_charges(cfg.n, cfg.seed);
    }

    auto report = verify(cfg, points, charges);
    std::printf("points %zu  ranks %d  depth %d+%d  order %d  %s\n", cfg.n, cfg.p, cfg.globalDepth, cfg.localDepth,
                cfg.order, to_string(cfg.precision).c_str());
    std::printf("distributed vs reference: %.3e (tolerance %.1e)\n", report.distributedVsReference, report.tolerance);
    if (report.referenceVsDirect)
    {
        std::printf("reference vs direct:      %.3e (bound %.1e)\n", *report.referenceVsDirect, report.epsilon);
    }
    else
    {
        std::printf("reference vs direct:      skipped (N > %zu)\n", kVerifyDirectCap);
    }
    std::size_t lo = SIZE_MAX, hi = 0;
    for (const auto& r : report.run.ranks)
    {
        lo = std::min(lo, r.points);
        hi = std::max(hi, r.points);
    }
    std::printf("points per rank: min %zu max %zu (ideal %.1f)\n", lo, hi, static_cast<double>(cfg.n) / cfg.p);

    if (!o.out.empty())
    {
        writeText(o.out + ".csv", stats_csv_header() + stats_csv_rows(report.run, cfg.p, 0, report.referenceVsDirect));
        writeText(o.out + ".json", manifest_json(cfg, "verify", {&report.run}, report));
        write_potentials(o.out + ".potentials.bin", report.run.potentials);
    }
    std::printf("%s\n", report.passed ? "PASS" : "FAIL");
    return report.passed ? 0 : 1;
}

int cmdSweep(const Options& o)
{
    auto cfg    = toConfig(o);
    auto mode   = parse_sweep_mode(o.mode);
    auto groups = sweep(cfg, o.ranks, mode);

    std::string rows = stats_csv_header();
    std::vector<const DistributedRun*> runs;
    for (const auto& g : groups)
        for (std::size_t r = 0; r < g.repeats.size(); ++r)
        {
            rows += stats_csv_rows(g.repeats[r], g.p, static_cast<int>(r), std::nullopt);
            runs.push_back(&g.repeats[r]);
        }
    auto summary = sweep_summary_csv(groups);
    std::cout << summary;
    if (!o.out.empty())
    {
        writeText(o.out + ".csv", rows);
        writeText(o.out + "_summary.csv", summary);
        writeText(o.out + ".json", manifest_json(cfg, "sweep " + to_string(mode), runs));
    }
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Distributed uniform-octree KIFMM over a simulated multi-rank transport"};
    app.require_subcommand(1);
    Options o;

    auto common = [&](CLI::App* sub)
    {
        sub->add_option("--dist", o.dist, "uniform_cube | sphere_surface")->capture_default_str();
        sub->add_option("--n", o.n, "number of points (per rank in weak sweeps)")->capture_default_str();
        sub->add_option("--seed", o.seed, "random seed")->capture_default_str();
        sub->add_option("--precision", o.precision, "f32 | f64")->capture_default_str();
        sub->add_option("--out", o.out, "output path or prefix");
    };
    auto run = [&](CLI::App* sub)
    {
        sub->add_option("--p", o.ranks, "simulated ranks (list for sweep)")->delimiter(',')->capture_default_str();
        sub->add_option("--local-depth", o.localDepth, "levels below the local roots")->capture_default_str();
        sub->add_option("--order", o.order, "points per surface edge")->capture_default_str();
        sub->add_option("--repeats", o.repeats, "repetitions per configuration")->capture_default_str();
        sub->add_option("--root-policy", o.rootPolicy, "contiguous | sampled")->capture_default_str();
        sub->add_flag("--no-overlap", o.noOverlap, "evaluate the near field after the far field");
        sub->add_flag("--no-timings", o.noTimings, "report zero wall times for byte-reproducible output");
    };

    auto* gen = app.add_subcommand("generate", "write a point file");
    common(gen);
    gen->add_flag("--charges", o.writeCharges, "also write <out>.charges");

    auto* ver = app.add_subcommand("verify", "compare distributed, reference and direct potentials");
    common(ver);
    run(ver);
    ver->add_option("--global-depth", o.globalDepth, "level of the local roots")->capture_default_str();
    ver->add_option("--points", o.pointsFile, "read points from an FMMPTS1 file");
    ver->add_option("--charges", o.chargesFile, "read charges from a charge file");
    ver->add_flag("--inject-fault", o.injectFault, "drop one ghost on rank 0 before evaluating");

    auto* swp = app.add_subcommand("sweep", "weak or strong scaling sweep");
    common(swp);
    run(swp);
    swp->add_option("--mode", o.mode, "weak | strong")->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try
    {
        const auto backend = selected_backend();
        if (backend != "sim") { throw Error("transport backend '" + backend + "' is not available in this build"); }
        if (o.ranks.empty()) { throw Error("--p needs at least one value"); }
        if (*gen) { return cmdGenerate(o); }
        if (*ver) { return cmdVerify(o); }
        return cmdSweep(o);
    }
    catch (const std::exception& e)
    {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
