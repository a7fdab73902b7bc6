#include "dfmm/kernels.hpp"

namespace dfmm
{

double relative_l2_error(std::span<const double> approx, std::span<const double> exact)
{
    if (approx.size() != exact.size()) { throw Error("error norm over vectors of different length"); }
    double num = 0, den = 0;
    for (std::size_t i = 0; i < exact.size(); ++i)
    {
        double d = approx[i] - exact[i];
        num += d * d;
        den += exact[i] * exact[i];
    }
    if (den == 0) { return num == 0 ? 0.0 : INFINITY; }
    return std::sqrt(num / den);
}

} // namespace dfmm
