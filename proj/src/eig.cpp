#include "capsbench/eig.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace capsbench {

EigResult symmetric_eig(const Tensor& a) {
    if (a.ndim() != 2 || a.dim(0) != a.dim(1))
        throw ShapeError("symmetric_eig: matrix must be square, got " + shape_str(a.shape));
    const int n = a.dim(0);
    Tensor b = a;
    Tensor v({n, n}, 0);
    for (int i = 0; i < n; ++i) v.at(i, i) = 1;

    real frob = 0;
    for (real x : a.data) frob += x * x;
    const real tol = std::sqrt(frob) * 1e-14 + 1e-300;

    const int max_sweeps = 100;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        real off = 0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) off += b.at(p, q) * b.at(p, q);
        if (std::sqrt(2 * off) <= tol) break;

        for (int p = 0; p < n; ++p) {
            for (int q = p + 1; q < n; ++q) {
                const real apq = b.at(p, q);
                if (std::abs(apq) <= tol / (n * n + 1)) continue;
                const real theta = (b.at(q, q) - b.at(p, p)) / (2 * apq);
                const real t = (theta >= 0 ? 1 : -1) /
                               (std::abs(theta) + std::sqrt(theta * theta + 1));
                const real c = real(1) / std::sqrt(t * t + 1);
                const real s = t * c;
                for (int k = 0; k < n; ++k) {
                    const real bkp = b.at(k, p), bkq = b.at(k, q);
                    b.at(k, p) = c * bkp - s * bkq;
                    b.at(k, q) = s * bkp + c * bkq;
                }
                for (int k = 0; k < n; ++k) {
                    const real bpk = b.at(p, k), bqk = b.at(q, k);
                    b.at(p, k) = c * bpk - s * bqk;
                    b.at(q, k) = s * bpk + c * bqk;
                }
                for (int k = 0; k < n; ++k) {
                    const real vkp = v.at(k, p), vkq = v.at(k, q);
                    v.at(k, p) = c * vkp - s * vkq;
                    v.at(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](int i, int j) { return b.at(i, i) > b.at(j, j); });

    EigResult res;
    res.values.resize(static_cast<size_t>(n));
    res.vectors = Tensor({n, n});
    for (int i = 0; i < n; ++i) {
        res.values[static_cast<size_t>(i)] = b.at(order[static_cast<size_t>(i)], order[static_cast<size_t>(i)]);
        for (int k = 0; k < n; ++k) res.vectors.at(k, i) = v.at(k, order[static_cast<size_t>(i)]);
    }
    return res;
}

}  // namespace capsbench
