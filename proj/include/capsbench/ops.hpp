#pragma once

#include "capsbench/graph.hpp"
#include "capsbench/tensor.hpp"

namespace capsbench {

enum class Activation { Relu, Tanh, Sigmoid };

// --- plain matrix kernels (row-major, fixed accumulation order) ---
// C(MxN) += A(MxK) * B(KxN)
void matmul(const real* A, const real* B, real* C, int M, int K, int N);
// C(KxN) += A^T(MxK) * B(MxN)
void matmul_tn(const real* A, const real* B, real* C, int M, int K, int N);
// C(MxK) += A(MxN) * B^T(KxN)
void matmul_nt(const real* A, const real* B, real* C, int M, int N, int K);

// --- elementwise / reduction ops on the tape ---
NodeId add(Graph& g, NodeId a, NodeId b);
NodeId sub(Graph& g, NodeId a, NodeId b);
NodeId mul(Graph& g, NodeId a, NodeId b);
NodeId scale(Graph& g, NodeId a, real k);
NodeId add_scalar(Graph& g, NodeId a, real k);
NodeId mul_const(Graph& g, NodeId a, const Tensor& c);
NodeId activation(Graph& g, NodeId a, Activation kind);
NodeId softmax(Graph& g, NodeId a, int axis);
NodeId sum(Graph& g, NodeId a);
NodeId reshape(Graph& g, NodeId a, std::vector<int> shape);
NodeId detach(Graph& g, NodeId a);

// --- dense / conv layers ---
// x: len N, W: NxM, b: len M -> len M
NodeId fully_connected(Graph& g, NodeId x, NodeId W, NodeId b);
// x: HxWxCin, kernels: KhxKwxCinxCout, valid padding -> H'xW'xCout
NodeId conv2d(Graph& g, NodeId x, NodeId kernels, int stride);
// Zero-pad the spatial dims of an HxWxC tensor by `pad` on every side.
NodeId pad2d(Graph& g, NodeId x, int pad);
// x: HxWxC, bias: C -> x with bias added per channel
NodeId add_channel_bias(Graph& g, NodeId x, NodeId bias);
NodeId pool_avg(Graph& g, NodeId x, int window, int stride);
NodeId pool_max(Graph& g, NodeId x, int window, int stride);
NodeId global_avg_pool(Graph& g, NodeId x);

// Valid-convolution output extent; shared by conv and pooling.
// Output extent of a valid convolution; 0 when the kernel does not fit (the
// in < k guard matters because C++ integer division truncates toward zero).
inline int conv_out_extent(int in, int k, int stride) {
    return in < k ? 0 : (in - k) / stride + 1;
}

// --- capsule primitives ---
// Per-row L2 norms of an RxD matrix. Forward is exact sqrt; the backward
// denominator is guarded by sqrt(n^2 + 1e-12).
NodeId row_norms(Graph& g, NodeId m);
// Squash nonlinearity applied to each row of an RxD matrix.
NodeId squash_rows(Graph& g, NodeId m);
// u: NxD1, W: NxCxD1xD2 -> prediction vectors NxCxD2
NodeId caps_transform(Graph& g, NodeId u, NodeId W);
// c: NxC couplings, u_hat: NxCxD2 -> CxD2 weighted sums
NodeId caps_weighted_sum(Graph& g, NodeId c, NodeId u_hat);
// u_hat: NxCxD2, v: CxD2 -> NxC dot-product agreements
NodeId caps_agreement(Graph& g, NodeId u_hat, NodeId v);
// Zero every row of an RxD matrix except keep_row.
NodeId mask_rows(Graph& g, NodeId m, int keep_row);

// --- batch norm (single-sample spatial statistics in training mode) ---
// x: HxWxC, gamma/beta: C. batch_mean/batch_var receive this pass's
// per-channel statistics for the caller's running-average update.
NodeId batch_norm_train(Graph& g, NodeId x, NodeId gamma, NodeId beta, real eps,
                        Tensor* batch_mean, Tensor* batch_var);
// Inference-mode normalization folded to a per-channel affine map.
NodeId channel_affine(Graph& g, NodeId x, const Tensor& scl, const Tensor& shift);

// --- classification loss ---
NodeId softmax_cross_entropy(Graph& g, NodeId logits, int label);

}  // namespace capsbench
