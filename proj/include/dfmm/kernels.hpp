#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "dfmm/morton.hpp"

namespace dfmm
{

/// 1/|x - y| without the 1/(4 pi) factor; coincident points contribute zero.
template<class Real>
inline Real laplace_kernel(const Point3& x, const Point3& y)
{
    Real dx = static_cast<Real>(x.x - y.x);
    Real dy = static_cast<Real>(x.y - y.y);
    Real dz = static_cast<Real>(x.z - y.z);
    Real r2 = dx * dx + dy * dy + dz * dz;
    return r2 > Real(0) ? Real(1) / std::sqrt(r2) : Real(0);
}

inline double laplace_kernel(const Point3& x, const Point3& y) { return laplace_kernel<double>(x, y); }

/*! @brief Accumulate f_i += sum_j K(x_i, y_j) s_j
 *
 * Sources are visited in order, so the accumulation order is fixed by the caller.
 */
template<class Real>
void accumulate_p2p(std::span<const Point3> targets, std::span<const Point3> sources, std::span<const Real> charges,
                    std::span<Real> potentials)
{
    for (std::size_t i = 0; i < targets.size(); ++i)
    {
        const Point3& x = targets[i];
        Real acc        = 0;
        for (std::size_t j = 0; j < sources.size(); ++j)
        {
            acc += laplace_kernel<Real>(x, sources[j]) * charges[j];
        }
        potentials[i] += acc;
    }
}

/// Dense evaluation of all pairs. Coincident target/source pairs, including the self term, are skipped.
template<class Real>
std::vector<Real> direct_sum(std::span<const Point3> targets, std::span<const Point3> sources,
                             std::span<const Real> charges)
{
    if (charges.size() != sources.size()) { throw Error("charge count does not match source count"); }
    std::vector<Real> f(targets.size(), Real(0));
    accumulate_p2p<Real>(targets, sources, charges, f);
    return f;
}

/// Relative L2 error |a - b| / |b|.
double relative_l2_error(std::span<const double> approx, std::span<const double> exact);

} // namespace dfmm
