#include <doctest.h>

#include <cmath>
#include <random>

#include "dfmm/kernels.hpp"
#include "dfmm/kifmm.hpp"

using namespace dfmm;

namespace
{

std::vector<Point3> randomPoints(std::size_t n, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<Point3> pts(n);
    for (auto& p : pts)
        p = {u(rng), u(rng), u(rng)};
    return pts;
}

// Second implementation: explicit pair loop with hypot and an index-based self exclusion.
std::vector<double> pairLoop(const std::vector<Point3>& pts, const std::vector<double>& q)
{
    std::vector<double> f(pts.size(), 0.0);
    for (std::size_t i = 0; i < pts.size(); ++i)
        for (std::size_t j = 0; j < pts.size(); ++j)
        {
            if (i == j) { continue; }
            f[i] += q[j] / std::hypot(pts[i].x - pts[j].x, pts[i].y - pts[j].y, pts[i].z - pts[j].z);
        }
    return f;
}

} // namespace

TEST_CASE("laplace kernel values")
{
    CHECK(laplace_kernel({0, 0, 0}, {1, 0, 0}) == 1.0);
    CHECK(laplace_kernel({0, 0, 0}, {3, 4, 0}) == doctest::Approx(0.2).epsilon(1e-15));
    CHECK(laplace_kernel({0.3, 0.1, 0.2}, {0.3, 0.1, 0.2}) == 0.0);
    CHECK(laplace_kernel<float>({0, 0, 0}, {0, 2, 0}) == 0.5f);
}

TEST_CASE("kernel symmetry and translation invariance")
{
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<int> grid(-512, 512);
    auto dyadic = [&] { return grid(rng) / 1024.0; };
    for (int i = 0; i < 200; ++i)
    {
        Point3 x{dyadic(), dyadic(), dyadic()}, y{dyadic(), dyadic(), dyadic()}, t{dyadic(), dyadic(), dyadic()};
        CHECK(laplace_kernel(x, y) == laplace_kernel(y, x));
        Point3 xt{x.x + t.x, x.y + t.y, x.z + t.z}, yt{y.x + t.x, y.y + t.y, y.z + t.z};
        CHECK(laplace_kernel(xt, yt) == laplace_kernel(x, y));
    }
}

TEST_CASE("direct sum")
{
    std::vector<Point3> target{{0, 0, 0}}, sources{{1, 0, 0}, {0, 1, 0}};
    std::vector<double> ones{1, 1};
    CHECK(direct_sum<double>(target, sources, ones)[0] == 2.0);

    std::vector<double> wrong{1};
    CHECK_THROWS_AS(direct_sum<double>(target, sources, wrong), Error);

    auto pts = randomPoints(100, 2);
    std::vector<double> zeros(pts.size(), 0.0), unitq(pts.size(), 1.0);
    for (double f : direct_sum<double>(pts, pts, zeros))
        CHECK(f == 0.0);

    auto f      = direct_sum<double>(pts, pts, unitq);
    auto oracle = pairLoop(pts, unitq);
    CHECK(relative_l2_error(f, oracle) < 1e-14);
}

TEST_CASE("direct sum is linear in the charges")
{
    auto pts = randomPoints(200, 3);
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-1, 1);
    std::vector<double> s1(pts.size()), s2(pts.size()), mix(pts.size());
    const double alpha = 2.75;
    for (std::size_t i = 0; i < pts.size(); ++i)
    {
        s1[i]  = u(rng);
        s2[i]  = u(rng);
        mix[i] = alpha * s1[i] + s2[i];
    }
    auto f1 = direct_sum<double>(pts, pts, s1), f2 = direct_sum<double>(pts, pts, s2), fm = direct_sum<double>(pts, pts, mix);
    std::vector<double> combined(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i)
        combined[i] = alpha * f1[i] + f2[i];
    CHECK(relative_l2_error(fm, combined) < 1e-12);
}

TEST_CASE("relative error norm")
{
    std::vector<double> a{1, 2}, b{1, 2}, c{0, 0};
    CHECK(relative_l2_error(a, b) == 0.0);
    CHECK(relative_l2_error(c, c) == 0.0);
    CHECK(std::isinf(relative_l2_error(a, c)));
    CHECK_THROWS_AS(relative_l2_error(a, std::vector<double>{1}), Error);
}

TEST_CASE("near-field accumulation")
{
    const BoundingCube unit{{0, 0, 0}, 1};
    SUBCASE("two adjacent leaves with one point each")
    {
        std::vector<Point3> pts{{0.1, 0.1, 0.1}, {0.6, 0.1, 0.1}};
        std::vector<double> q{1, 1};
        UniformTree t(pts, unit, {MortonKey::root()}, 1);
        std::vector<double> f(2, 0.0);
        p2p_uli<double>(t, pts, q, {}, f);
        CHECK(f[0] == doctest::Approx(2.0));
        CHECK(f[1] == doctest::Approx(2.0));
    }
    SUBCASE("empty neighbors contribute nothing")
    {
        std::vector<Point3> pts{{0.05, 0.05, 0.05}, {0.1, 0.05, 0.05}, {0.95, 0.95, 0.95}};
        std::vector<double> q{1, 2, 4};
        UniformTree t(pts, unit, {MortonKey::root()}, 3);
        std::vector<double> f(3, 0.0);
        p2p_uli<double>(t, pts, q, {}, f);
        CHECK(f[0] == doctest::Approx(2 / 0.05));
        CHECK(f[1] == doctest::Approx(1 / 0.05));
        CHECK(f[2] == 0.0);
    }
    SUBCASE("unresolved remote leaves propagate the lookup failure")
    {
        std::vector<Point3> pts{{0.4, 0.4, 0.4}};
        std::vector<double> q{1};
        UniformTree t(pts, unit, {MortonKey::fromMortonIndex(0, 1)}, 2);
        std::vector<double> f(1, 0.0);
        LeafLookup<double> missing = [](MortonKey) -> std::optional<LeafSources<double>>
        { throw Error("unresolved dependency"); };
        CHECK_THROWS_WITH_AS(p2p_uli<double>(t, pts, q, missing, f), doctest::Contains("unresolved dependency"), Error);
    }
}
