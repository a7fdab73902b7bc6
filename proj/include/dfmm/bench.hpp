#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dfmm/distributed_fmm.hpp"

namespace dfmm
{

enum class Distribution
{
    uniform_cube,
    sphere_surface,
};

enum class Precision
{
    f32,
    f64,
};

std::string to_string(Distribution d);
std::string to_string(Precision p);
Distribution parse_distribution(const std::string& s);
Precision parse_precision(const std::string& s);
int precision_bits(Precision p);

/// Points uniform in [0,1)^3 or area-uniform on the unit sphere, from a seeded generator.
std::vector<Point3> generate_points(Distribution d, std::size_t n, std::uint64_t seed);

/// Charges uniform in [0,1), drawn from a stream independent of the point stream.
std::vector<double> generate_charges(std::size_t n, std::uint64_t seed);

/*! @brief Binary point file
 *
 * Layout: 8-byte magic "FMMPTS1\0", uint64 count, uint32 precision bits (32 or 64), then count xyz
 * triples stored at that precision. Native (little-endian) byte order.
 */
void write_points(const std::filesystem::path& path, const std::vector<Point3>& points, Precision precision);
std::vector<Point3> read_points(const std::filesystem::path& path);

/// Charge file: magic "FMMCHG1\0", uint64 count, count doubles.
void write_charges(const std::filesystem::path& path, const std::vector<double>& charges);
std::vector<double> read_charges(const std::filesystem::path& path);

struct RunConfig
{
    Distribution distribution{Distribution::uniform_cube};
    std::size_t n{4096};
    int p{8};
    int globalDepth{1};
    int localDepth{2};
    int order{6};
    Precision precision{Precision::f64};
    std::uint64_t seed{42};
    int repeats{1};
    RootPolicy rootPolicy{RootPolicy::contiguous};
    bool overlapNearField{true};
    /// Wall-clock timings; disabled runs report zero times and are byte-reproducible.
    bool timings{true};
    /// Test hook: rank 0 forgets one existing ghost before evaluating.
    bool dropGhost{false};

    FmmConfig fmm() const;
};

/// Largest accepted relative L2 error of the reference pipeline against direct summation.
double epsilon_bound(int order, Precision precision);
/// Orders with a frozen bound.
std::vector<int> epsilon_orders();

/// Distributed-vs-reference tolerance.
double agreement_tolerance(Precision precision);

struct RankReport
{
    int rank{0};
    std::size_t points{0};
    std::size_t roots{0};
    std::size_t uDegree{0};
    std::size_t vDegree{0};
    std::size_t uGhostBoxes{0};
    std::size_t vGhostBoxes{0};
    std::size_t ghostPoints{0};
    TransportStats setupStats;
    TransportStats runtimeStats;
    SetupTimings setupTimings;
    RuntimeTimings runtimeTimings;
};

struct DistributedRun
{
    /// Potentials indexed by global point id.
    std::vector<double> potentials;
    std::vector<RankReport> ranks;
    Splitters splitters;
    std::uint64_t layoutDigest{0};
    BoundingCube cube;
};

/*! @brief Set up and evaluate once on a simulated world of cfg.p ranks
 *
 * Rank r starts with the contiguous slice [r N / P, (r + 1) N / P) of the input; ids are input indices.
 */
DistributedRun run_distributed(const RunConfig& cfg, const std::vector<Point3>& points,
                               const std::vector<double>& charges);

/// Single-rank reference pipeline on the globally sorted input, potentials indexed by input index.
std::vector<double> run_reference(const RunConfig& cfg, const std::vector<Point3>& points,
                                  const std::vector<double>& charges);

/// Direct summation in double precision, potentials indexed by input index.
std::vector<double> run_direct(const std::vector<Point3>& points, const std::vector<double>& charges);

/// Direct summation is skipped above this many points.
inline constexpr std::size_t kVerifyDirectCap = 100000;

struct VerifyReport
{
    double distributedVsReference{0};
    std::optional<double> referenceVsDirect;
    double tolerance{0};
    double epsilon{0};
    bool passed{false};
    DistributedRun run;
};

VerifyReport verify(const RunConfig& cfg, const std::vector<Point3>& points, const std::vector<double>& charges);

/// CSV with one row per rank, optionally tagged with a repeat index and a relative error.
std::string stats_csv_header();
std::string stats_csv_rows(const DistributedRun& run, int p, int repeat, std::optional<double> error);

struct SweepGroup
{
    int p{0};
    int globalDepth{0};
    std::size_t n{0};
    std::vector<DistributedRun> repeats;
};

enum class SweepMode
{
    weak,
    strong,
};

SweepMode parse_sweep_mode(const std::string& s);
std::string to_string(SweepMode m);

/*! @brief Scaling sweep over rank counts that are powers of eight
 *
 * Weak mode keeps `n` points per rank, strong mode keeps `n` points in total. The global depth of
 * each group is log8(P).
 */
std::vector<SweepGroup> sweep(const RunConfig& base, const std::vector<int>& ranks, SweepMode mode);

/// One row per group: mean and standard deviation over repeats of the slowest-rank phase times.
std::string sweep_summary_csv(const std::vector<SweepGroup>& groups);

/// JSON run manifest: configuration, environment identifiers, splitters, layout digest, bounds and timings.
std::string manifest_json(const RunConfig& cfg, const std::string& command, const std::vector<const DistributedRun*>& runs,
                          const std::optional<VerifyReport>& report = std::nullopt);

/// Raw little-endian doubles, one per input point.
void write_potentials(const std::filesystem::path& path, const std::vector<double>& potentials);

/// log8(p) when p is a power of eight, otherwise nullopt.
std::optional<int> octal_depth(int p);

} // namespace dfmm
