#pragma once

#include <vector>

#include "capsbench/tensor.hpp"

namespace capsbench {

// Eigendecomposition of a symmetric matrix, eigenvalues sorted descending.
// vectors is n x n with eigenvector i in column i.
struct EigResult {
    std::vector<real> values;
    Tensor vectors;
};

// Cyclic Jacobi rotations; suitable for the desk-scale matrices used here
// (a few hundred rows).
EigResult symmetric_eig(const Tensor& a);

}  // namespace capsbench
