#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "dfmm/morton.hpp"
#include "dfmm/uniform_tree.hpp"

namespace dfmm
{

/// Number of coefficients in a u or d vector for expansion order `order`: 6(order-1)^2 + 2.
std::size_t expansion_length(int order);

/// Radii of the equivalent and check surfaces as multiples of the box side.
struct SurfaceScales
{
    double upEquivalent{1.05};
    double upCheck{2.95};
    double downEquivalent{2.95};
    double downCheck{1.05};
};

/// Boundary lattice of a cube with `order` points per edge, side `side * scale`, centered at `center`.
std::vector<Point3> surface_grid(int order, const Point3& center, double side, double scale);

template<class Real>
using Matrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>;

template<class Real>
using Vector = Eigen::Matrix<Real, Eigen::Dynamic, 1>;

/// Relative singular value cutoff used when inverting check-to-equivalent systems.
template<class Real>
constexpr double default_svd_cutoff()
{
    return sizeof(Real) == 4 ? 1e-5 : 1e-10;
}

/*! @brief Precomputed translation operators for a box of side `referenceSide`
 *
 * Laplace is homogeneous of degree -1, so the operators of any level follow from these:
 * U2U, D2D and the composed M2L are scale free, and the check-to-equivalent inverses scale
 * linearly with the box side.
 */
template<class Real>
struct OperatorSet
{
    int order{0};
    std::size_t length{0};
    double referenceSide{1.0};
    SurfaceScales scales;
    double svdCutoff{0};

    /// Unit surface lattice in [-1, 1]^3, scaled by side * scale / 2 for a concrete surface.
    std::vector<Point3> unitGrid;

    /// Regularized inverse of K(up check, up equivalent), reference side.
    Matrix<Real> upCheckToEquivalent;
    /// Regularized inverse of K(down check, down equivalent), reference side.
    Matrix<Real> downCheckToEquivalent;

    /// Child octant equivalent density -> parent equivalent density.
    std::array<Matrix<Real>, 8> u2u;
    /// Parent downward density -> child downward density.
    std::array<Matrix<Real>, 8> d2d;
    /// K(target down check, source up equivalent) per transfer vector, reference side.
    std::vector<Matrix<Real>> m2l;

    struct Diagnostics
    {
        double upConditionNumber{0};
        double downConditionNumber{0};
        std::size_t upRank{0};
        std::size_t downRank{0};
    } diagnostics;

    /// Surface points of box `key` in domain coordinates.
    std::vector<Point3> surface(MortonKey key, const BoundingCube& cube, double scale) const;
};

template<class Real>
OperatorSet<Real> precompute_operators(int order, double referenceSide = 1.0, SurfaceScales scales = {},
                                       double svdCutoff = default_svd_cutoff<Real>());

/// Process-wide cache of operator sets with default scales, keyed by order and precision.
template<class Real>
std::shared_ptr<const OperatorSet<Real>> shared_operators(int order);

/// Dense per-level u and d vectors for every box of a tree.
template<class Real>
class ExpansionStore
{
public:
    ExpansionStore() = default;
    ExpansionStore(const UniformTree& tree, std::size_t length);

    std::size_t length() const { return length_; }

    std::span<Real> up(int level, std::size_t index) { return slot(up_, level, index); }
    std::span<const Real> up(int level, std::size_t index) const { return slot(up_, level, index); }
    std::span<Real> down(int level, std::size_t index) { return slot(down_, level, index); }
    std::span<const Real> down(int level, std::size_t index) const { return slot(down_, level, index); }

    void clear();

private:
    std::span<Real> slot(std::vector<std::vector<Real>>& v, int level, std::size_t index)
    {
        return {v[level - rootLevel_].data() + index * length_, length_};
    }
    std::span<const Real> slot(const std::vector<std::vector<Real>>& v, int level, std::size_t index) const
    {
        return {v[level - rootLevel_].data() + index * length_, length_};
    }

    int rootLevel_{0};
    std::size_t length_{0};
    std::vector<std::vector<Real>> up_;
    std::vector<std::vector<Real>> down_;
};

/// u of a single leaf from its sources. Empty sources give a zero vector.
template<class Real>
std::vector<Real> s2u(MortonKey leaf, const BoundingCube& cube, std::span<const Point3> points,
                      std::span<const Real> charges, const OperatorSet<Real>& ops);

/// Field of an upward equivalent density at arbitrary (far) points.
template<class Real>
std::vector<Real> evaluate_up(MortonKey box, const BoundingCube& cube, std::span<const Real> u,
                              std::span<const Point3> targets, const OperatorSet<Real>& ops);

/// Accumulate the field of a downward equivalent density at points inside the box.
template<class Real>
void d2t(MortonKey leaf, const BoundingCube& cube, std::span<const Real> d, std::span<const Point3> targets,
         const OperatorSet<Real>& ops, std::span<Real> potentials);

/// Resolves the u vector of a same-level source box: nullptr when the box holds no points.
template<class Real>
using UpLookup = std::function<const Real*(MortonKey)>;

/// S2U for every leaf of the tree.
template<class Real>
void s2u_leaves(const UniformTree& tree, std::span<const Point3> points, std::span<const Real> charges,
                const OperatorSet<Real>& ops, ExpansionStore<Real>& store);

/// U2U from the leaves up to the tree roots, children in octant order.
template<class Real>
void upward_pass(const UniformTree& tree, const OperatorSet<Real>& ops, ExpansionStore<Real>& store);

/*! @brief Downward work for one level: D2D from the parent then V-list M2L
 *
 * Only boxes holding points are updated. The parent contribution is skipped when the parent
 * is outside the tree or above level 2, where downward densities are identically zero.
 * V-list sources are visited in Morton order.
 */
template<class Real>
void downward_level(const UniformTree& tree, int level, const OperatorSet<Real>& ops, ExpansionStore<Real>& store,
                    const UpLookup<Real>& lookup);

/// D2T for every leaf into `potentials` (indexed like the tree's sorted points).
template<class Real>
void d2t_leaves(const UniformTree& tree, std::span<const Point3> points, const OperatorSet<Real>& ops,
                const ExpansionStore<Real>& store, std::span<Real> potentials);

/// Sources of one leaf, local or ghost.
template<class Real>
struct LeafSources
{
    std::span<const Point3> points;
    std::span<const Real> charges;
};

/// Resolves an off-tree U-list leaf: nullopt when it holds no points; throws when unresolved.
template<class Real>
using LeafLookup = std::function<std::optional<LeafSources<Real>>(MortonKey)>;

/// Near-field (U-list) accumulation for every local leaf, sources in Morton order of their leaves.
template<class Real>
void p2p_uli(const UniformTree& tree, std::span<const Point3> points, std::span<const Real> charges,
             const LeafLookup<Real>& remote, std::span<Real> potentials);

/// Single-process uniform FMM over the full tree of the given depth, used as the reference pipeline.
template<class Real>
std::vector<Real> reference_fmm(std::span<const Point3> sortedPoints, std::span<const Real> charges,
                                const BoundingCube& cube, int depth, const OperatorSet<Real>& ops);

} // namespace dfmm
