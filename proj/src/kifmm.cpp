#include "dfmm/kifmm.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <sstream>

#include <Eigen/SVD>

#include "dfmm/kernels.hpp"

namespace dfmm
{

std::size_t expansion_length(int order)
{
    if (order < 2) { throw Error("expansion order must be at least 2"); }
    auto p = static_cast<std::size_t>(order - 1);
    return 6 * p * p + 2;
}

namespace
{

std::vector<Point3> unitSurface(int order)
{
    if (order < 2) { throw Error("expansion order must be at least 2"); }
    std::vector<Point3> grid;
    grid.reserve(expansion_length(order));
    const int last = order - 1;
    for (int k = 0; k < order; ++k)
        for (int j = 0; j < order; ++j)
            for (int i = 0; i < order; ++i)
            {
                bool boundary = i == 0 || j == 0 || k == 0 || i == last || j == last || k == last;
                if (!boundary) { continue; }
                grid.push_back({2.0 * i / last - 1.0, 2.0 * j / last - 1.0, 2.0 * k / last - 1.0});
            }
    return grid;
}

std::vector<Point3> placeSurface(const std::vector<Point3>& unit, const Point3& center, double side, double scale)
{
    const double r = side * scale / 2;
    std::vector<Point3> out(unit.size());
    for (std::size_t i = 0; i < unit.size(); ++i)
    {
        out[i] = {center.x + unit[i].x * r, center.y + unit[i].y * r, center.z + unit[i].z * r};
    }
    return out;
}

Eigen::MatrixXd kernelMatrix(const std::vector<Point3>& targets, const std::vector<Point3>& sources)
{
    Eigen::MatrixXd k(targets.size(), sources.size());
    for (std::size_t j = 0; j < sources.size(); ++j)
        for (std::size_t i = 0; i < targets.size(); ++i)
        {
            k(i, j) = laplace_kernel<double>(targets[i], sources[j]);
        }
    return k;
}

struct PseudoInverse
{
    Eigen::MatrixXd matrix;
    double condition;
    std::size_t rank;
};

PseudoInverse truncatedPseudoInverse(const Eigen::MatrixXd& a, double cutoff, const char* what)
{
    Eigen::BDCSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& sigma = svd.singularValues();
    const double smax = sigma.size() ? sigma(0) : 0.0;
    const double smin = sigma.size() ? sigma(sigma.size() - 1) : 0.0;
    if (!(smax > 0) || !std::isfinite(smax) || !svd.matrixU().allFinite() || !svd.matrixV().allFinite())
    {
        std::ostringstream os;
        os << "factorization of the " << what << " system failed: largest singular value " << smax
           << ", smallest " << smin;
        throw Error(os.str());
    }
    Eigen::VectorXd inv = Eigen::VectorXd::Zero(sigma.size());
    std::size_t rank    = 0;
    for (Eigen::Index i = 0; i < sigma.size(); ++i)
    {
        if (sigma(i) > cutoff * smax)
        {
            inv(i) = 1.0 / sigma(i);
            ++rank;
        }
    }
    Eigen::MatrixXd pinv = svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
    return {std::move(pinv), smin > 0 ? smax / smin : INFINITY, rank};
}

Point3 childCenter(int octant, double parentSide)
{
    const double q = parentSide / 4;
    return {(octant & 1) ? q : -q, (octant & 2) ? q : -q, (octant & 4) ? q : -q};
}

template<class Real>
Real leafScale(const OperatorSet<Real>& ops, double side)
{
    return static_cast<Real>(side / ops.referenceSide);
}

template<class Real>
Eigen::Map<const Vector<Real>> asVector(std::span<const Real> v)
{
    return {v.data(), static_cast<Eigen::Index>(v.size())};
}

template<class Real>
Eigen::Map<Vector<Real>> asVector(std::span<Real> v)
{
    return {v.data(), static_cast<Eigen::Index>(v.size())};
}

} // namespace

std::vector<Point3> surface_grid(int order, const Point3& center, double side, double scale)
{
    if (!(side > 0) || !(scale > 0)) { throw Error("surface side and scale must be positive"); }
    return placeSurface(unitSurface(order), center, side, scale);
}

template<class Real>
std::vector<Point3> OperatorSet<Real>::surface(MortonKey key, const BoundingCube& cube, double scale) const
{
    auto g = decode(key, cube);
    return placeSurface(unitGrid, box_center(key, cube), g.side, scale);
}

template<class Real>
OperatorSet<Real> precompute_operators(int order, double referenceSide, SurfaceScales scales, double svdCutoff)
{
    OperatorSet<Real> ops;
    ops.order         = order;
    ops.length        = expansion_length(order);
    ops.referenceSide = referenceSide;
    ops.scales        = scales;
    ops.svdCutoff     = svdCutoff;
    ops.unitGrid      = unitSurface(order);

    const Point3 origin{};
    const double s = referenceSide;
    auto surface   = [&](const Point3& c, double side, double scale) { return placeSurface(ops.unitGrid, c, side, scale); };

    auto upCheck   = surface(origin, s, scales.upCheck);
    auto upEquiv   = surface(origin, s, scales.upEquivalent);
    auto downCheck = surface(origin, s, scales.downCheck);
    auto downEquiv = surface(origin, s, scales.downEquivalent);

    auto up   = truncatedPseudoInverse(kernelMatrix(upCheck, upEquiv), svdCutoff, "upward check-to-equivalent");
    auto down = truncatedPseudoInverse(kernelMatrix(downCheck, downEquiv), svdCutoff, "downward check-to-equivalent");
    ops.diagnostics = {up.condition, down.condition, up.rank, down.rank};
    ops.upCheckToEquivalent   = up.matrix.template cast<Real>();
    ops.downCheckToEquivalent = down.matrix.template cast<Real>();

    for (int o = 0; o < 8; ++o)
    {
        Point3 c          = childCenter(o, s);
        auto childUpEquiv = surface(c, s / 2, scales.upEquivalent);
        ops.u2u[o]        = (up.matrix * kernelMatrix(upCheck, childUpEquiv)).template cast<Real>();

        auto childDownCheck = surface(c, s / 2, scales.downCheck);
        // the child's check-to-equivalent inverse is the reference one scaled by the side ratio
        ops.d2d[o] = (0.5 * down.matrix * kernelMatrix(childDownCheck, downEquiv)).template cast<Real>();
    }

    ops.m2l.reserve(kNumTransferVectors);
    for (const auto& t : transfer_vectors())
    {
        Point3 c{static_cast<double>(t.x) * s, static_cast<double>(t.y) * s, static_cast<double>(t.z) * s};
        ops.m2l.push_back(kernelMatrix(downCheck, surface(c, s, scales.upEquivalent)).template cast<Real>());
    }
    return ops;
}

template<class Real>
std::shared_ptr<const OperatorSet<Real>> shared_operators(int order)
{
    static std::mutex mutex;
    static std::map<int, std::shared_ptr<const OperatorSet<Real>>> cache;
    std::lock_guard lock(mutex);
    auto& slot = cache[order];
    if (!slot) { slot = std::make_shared<const OperatorSet<Real>>(precompute_operators<Real>(order)); }
    return slot;
}

template<class Real>
ExpansionStore<Real>::ExpansionStore(const UniformTree& tree, std::size_t length)
    : rootLevel_(tree.rootLevel())
    , length_(length)
{
    for (int l = tree.rootLevel(); l <= tree.depth(); ++l)
    {
        up_.emplace_back(tree.boxes(l).size() * length, Real(0));
        down_.emplace_back(tree.boxes(l).size() * length, Real(0));
    }
}

template<class Real>
void ExpansionStore<Real>::clear()
{
    for (auto& v : up_)
        std::fill(v.begin(), v.end(), Real(0));
    for (auto& v : down_)
        std::fill(v.begin(), v.end(), Real(0));
}

template<class Real>
std::vector<Real> s2u(MortonKey leaf, const BoundingCube& cube, std::span<const Point3> points,
                      std::span<const Real> charges, const OperatorSet<Real>& ops)
{
    std::vector<Real> u(ops.length, Real(0));
    if (points.empty()) { return u; }
    auto check = ops.surface(leaf, cube, ops.scales.upCheck);
    Vector<Real> q(ops.length);
    for (std::size_t i = 0; i < check.size(); ++i)
    {
        Real acc = 0;
        for (std::size_t j = 0; j < points.size(); ++j)
        {
            acc += laplace_kernel<Real>(check[i], points[j]) * charges[j];
        }
        q(i) = acc;
    }
    asVector(std::span<Real>(u)) = leafScale(ops, decode(leaf, cube).side) * (ops.upCheckToEquivalent * q);
    return u;
}

template<class Real>
std::vector<Real> evaluate_up(MortonKey box, const BoundingCube& cube, std::span<const Real> u,
                              std::span<const Point3> targets, const OperatorSet<Real>& ops)
{
    auto equiv = ops.surface(box, cube, ops.scales.upEquivalent);
    std::vector<Real> f(targets.size(), Real(0));
    accumulate_p2p<Real>(targets, equiv, u, f);
    return f;
}

template<class Real>
void d2t(MortonKey leaf, const BoundingCube& cube, std::span<const Real> d, std::span<const Point3> targets,
         const OperatorSet<Real>& ops, std::span<Real> potentials)
{
    auto equiv = ops.surface(leaf, cube, ops.scales.downEquivalent);
    accumulate_p2p<Real>(targets, equiv, d, potentials);
}

template<class Real>
void s2u_leaves(const UniformTree& tree, std::span<const Point3> points, std::span<const Real> charges,
                const OperatorSet<Real>& ops, ExpansionStore<Real>& store)
{
    auto leaves = tree.leaves();
    for (std::size_t i = 0; i < leaves.size(); ++i)
    {
        auto range = tree.leafRange(i);
        if (range.count == 0) { continue; }
        auto u = s2u<Real>(leaves[i], tree.cube(), points.subspan(range.begin, range.count),
                           charges.subspan(range.begin, range.count), ops);
        std::copy(u.begin(), u.end(), store.up(tree.depth(), i).begin());
    }
}

template<class Real>
void upward_pass(const UniformTree& tree, const OperatorSet<Real>& ops, ExpansionStore<Real>& store)
{
    for (int l = tree.depth(); l > tree.rootLevel(); --l)
    {
        auto keys = tree.boxes(l);
        for (std::size_t i = 0; i < keys.size(); ++i)
        {
            if (tree.pointCount(l, i) == 0) { continue; }
            auto parentU = asVector(store.up(l - 1, i / 8));
            parentU.noalias() += ops.u2u[keys[i].octant()] * asVector(std::span<const Real>(store.up(l, i)));
        }
    }
}

template<class Real>
void downward_level(const UniformTree& tree, int level, const OperatorSet<Real>& ops, ExpansionStore<Real>& store,
                    const UpLookup<Real>& lookup)
{
    if (!tree.containsLevel(level)) { throw Error("downward pass on a level outside the tree"); }
    auto keys = tree.boxes(level);
    const bool hasParent = level - 1 >= 2 && tree.containsLevel(level - 1);
    Vector<Real> check(ops.length);
    for (std::size_t i = 0; i < keys.size(); ++i)
    {
        if (tree.pointCount(level, i) == 0) { continue; }
        auto d = asVector(store.down(level, i));
        if (hasParent)
        {
            d.noalias() += ops.d2d[keys[i].octant()] * asVector(std::span<const Real>(store.down(level - 1, i / 8)));
        }
        if (level < 2) { continue; }
        check.setZero();
        bool any = false;
        for (auto source : v_list(keys[i]))
        {
            const Real* u = lookup(source);
            if (!u) { continue; }
            Eigen::Map<const Vector<Real>> uv(u, static_cast<Eigen::Index>(ops.length));
            check.noalias() += ops.m2l[transfer_index(transfer_vector(source, keys[i]))] * uv;
            any = true;
        }
        if (any) { d.noalias() += ops.downCheckToEquivalent * check; }
    }
}

template<class Real>
void d2t_leaves(const UniformTree& tree, std::span<const Point3> points, const OperatorSet<Real>& ops,
                const ExpansionStore<Real>& store, std::span<Real> potentials)
{
    auto leaves = tree.leaves();
    for (std::size_t i = 0; i < leaves.size(); ++i)
    {
        auto range = tree.leafRange(i);
        if (range.count == 0) { continue; }
        d2t<Real>(leaves[i], tree.cube(), store.down(tree.depth(), i), points.subspan(range.begin, range.count), ops,
                  potentials.subspan(range.begin, range.count));
    }
}

template<class Real>
void p2p_uli(const UniformTree& tree, std::span<const Point3> points, std::span<const Real> charges,
             const LeafLookup<Real>& remote, std::span<Real> potentials)
{
    auto leaves = tree.leaves();
    for (std::size_t i = 0; i < leaves.size(); ++i)
    {
        auto target = tree.leafRange(i);
        if (target.count == 0) { continue; }
        auto targets = points.subspan(target.begin, target.count);
        auto out     = potentials.subspan(target.begin, target.count);
        for (auto key : u_list(leaves[i]))
        {
            std::optional<LeafSources<Real>> sources;
            if (auto idx = tree.indexOf(key))
            {
                auto r = tree.leafRange(*idx);
                if (r.count > 0) { sources = LeafSources<Real>{points.subspan(r.begin, r.count), charges.subspan(r.begin, r.count)}; }
            }
            else if (remote)
            {
                sources = remote(key);
            }
            if (sources) { accumulate_p2p<Real>(targets, sources->points, sources->charges, out); }
        }
    }
}

template<class Real>
std::vector<Real> reference_fmm(std::span<const Point3> sortedPoints, std::span<const Real> charges,
                                const BoundingCube& cube, int depth, const OperatorSet<Real>& ops)
{
    if (charges.size() != sortedPoints.size()) { throw Error("charge count does not match point count"); }
    UniformTree tree(sortedPoints, cube, {MortonKey::root()}, depth);
    ExpansionStore<Real> store(tree, ops.length);
    s2u_leaves<Real>(tree, sortedPoints, charges, ops, store);
    upward_pass<Real>(tree, ops, store);

    UpLookup<Real> lookup = [&](MortonKey key) -> const Real*
    {
        auto idx = tree.indexOf(key);
        if (!idx || tree.pointCount(key.level(), *idx) == 0) { return nullptr; }
        return store.up(key.level(), *idx).data();
    };
    for (int l = 2; l <= depth; ++l)
    {
        downward_level<Real>(tree, l, ops, store, lookup);
    }

    std::vector<Real> far(sortedPoints.size(), Real(0)), near(sortedPoints.size(), Real(0));
    d2t_leaves<Real>(tree, sortedPoints, ops, store, far);
    p2p_uli<Real>(tree, sortedPoints, charges, {}, near);
    for (std::size_t i = 0; i < far.size(); ++i)
    {
        far[i] += near[i];
    }
    return far;
}

#define DFMM_INSTANTIATE(Real)                                                                                         \
    template struct OperatorSet<Real>;                                                                                 \
    template OperatorSet<Real> precompute_operators<Real>(int, double, SurfaceScales, double);                         \
    template std::shared_ptr<const OperatorSet<Real>> shared_operators<Real>(int);                                     \
    template class ExpansionStore<Real>;                                                                               \
    template std::vector<Real> s2u<Real>(MortonKey, const BoundingCube&, std::span<const Point3>,                      \
                                         std::span<const Real>, const OperatorSet<Real>&);                             \
    template std::vector<Real> evaluate_up<Real>(MortonKey, const BoundingCube&, std::span<const Real>,                \
                                                 std::span<const Point3>, const OperatorSet<Real>&);                   \
    template void d2t<Real>(MortonKey, const BoundingCube&, std::span<const Real>, std::span<const Point3>,            \
                            const OperatorSet<Real>&, std::span<Real>);                                                \
    template void s2u_leaves<Real>(const UniformTree&, std::span<const Point3>, std::span<const Real>,                 \
                                   const OperatorSet<Real>&, ExpansionStore<Real>&);                                   \
    template void upward_pass<Real>(const UniformTree&, const OperatorSet<Real>&, ExpansionStore<Real>&);              \
    template void downward_level<Real>(const UniformTree&, int, const OperatorSet<Real>&, ExpansionStore<Real>&,       \
                                       const UpLookup<Real>&);                                                         \
    template void d2t_leaves<Real>(const UniformTree&, std::span<const Point3>, const OperatorSet<Real>&,              \
                                   const ExpansionStore<Real>&, std::span<Real>);                                      \
    template void p2p_uli<Real>(const UniformTree&, std::span<const Point3>, std::span<const Real>,                    \
                                const LeafLookup<Real>&, std::span<Real>);                                             \
    template std::vector<Real> reference_fmm<Real>(std::span<const Point3>, std::span<const Real>,                     \
                                                   const BoundingCube&, int, const OperatorSet<Real>&);

DFMM_INSTANTIATE(float)
DFMM_INSTANTIATE(double)

#undef DFMM_INSTANTIATE

} // namespace dfmm
