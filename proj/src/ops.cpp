#include "capsbench/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace capsbench {

namespace {
constexpr real kNormGuard = 1e-12;

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                         shape_str(b.shape));
}
}  // namespace

void matmul(const real* A, const real* B, real* C, int M, int K, int N) {
    for (int i = 0; i < M; ++i) {
        const real* a = A + static_cast<size_t>(i) * K;
        real* c = C + static_cast<size_t>(i) * N;
        for (int k = 0; k < K; ++k) {
            const real av = a[k];
            const real* b = B + static_cast<size_t>(k) * N;
            for (int j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}

void matmul_tn(const real* A, const real* B, real* C, int M, int K, int N) {
    for (int i = 0; i < M; ++i) {
        const real* a = A + static_cast<size_t>(i) * K;
        const real* b = B + static_cast<size_t>(i) * N;
        for (int k = 0; k < K; ++k) {
            const real av = a[k];
            real* c = C + static_cast<size_t>(k) * N;
            for (int j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}

void matmul_nt(const real* A, const real* B, real* C, int M, int N, int K) {
    for (int i = 0; i < M; ++i) {
        const real* a = A + static_cast<size_t>(i) * N;
        real* c = C + static_cast<size_t>(i) * K;
        for (int k = 0; k < K; ++k) {
            const real* b = B + static_cast<size_t>(k) * N;
            real acc = 0;
            for (int j = 0; j < N; ++j) acc += a[j] * b[j];
            c[k] += acc;
        }
    }
}

NodeId add(Graph& g, NodeId a, NodeId b) {
    const Tensor& va = g.value(a);
    const Tensor& vb = g.value(b);
    check_same_shape(va, vb, "add");
    Tensor out(va.shape);
    for (long i = 0; i < out.size(); ++i) out[i] = va[i] + vb[i];
    return g.make(std::move(out), {a, b}, [a, b](Graph& gg, NodeId self) {
        const Tensor& go = gg.grad(self);
        if (gg.needs_grad(a)) {
            Tensor& ga = gg.grad(a);
            for (long i = 0; i < go.size(); ++i) ga[i] += go[i];
        }
        if (gg.needs_grad(b)) {
            Tensor& gb = gg.grad(b);
            for (long i = 0; i < go.size(); ++i) gb[i] += go[i];
        }
    });
}

NodeId sub(Graph& g, NodeId a, NodeId b) {
    const Tensor& va = g.value(a);
    const Tensor& vb = g.value(b);
    check_same_shape(va, vb, "sub");
    Tensor out(va.shape);
    for (long i = 0; i < out.size(); ++i) out[i] = va[i] - vb[i];
    return g.make(std::move(out), {a, b}, [a, b](Graph& gg, NodeId self) {
        const Tensor& go = gg.grad(self);
        if (gg.needs_grad(a)) {
            Tensor& ga = gg.grad(a);
            for (long i = 0; i < go.size(); ++i) ga[i] += go[i];
        }
        if (gg.needs_grad(b)) {
            Tensor& gb = gg.grad(b);
            for (long i = 0; i < go.size(); ++i) gb[i] -= go[i];
        }
    });
}

NodeId mul(Graph& g, NodeId a, NodeId b) {
    const Tensor& va = g.value(a);
    const Tensor& vb = g.value(b);
    check_same_shape(va, vb, "mul");
    Tensor out(va.shape);
    for (long i = 0; i < out.size(); ++i) out[i] = va[i] * vb[i];
    return g.make(std::move(out), {a, b}, [a, b](Graph& gg, NodeId self) {
        const Tensor& go = gg.grad(self);
        const Tensor& va = gg.value(a);
        const Tensor& vb = gg.value(b);
        if (gg.needs_grad(a)) {
            Tensor& ga = gg.grad(a);
            for (long i = 0; i < go.size(); ++i) ga[i] += go[i] * vb[i];
        }
        if (gg.needs_grad(b)) {
            Tensor& gb = gg.grad(b);
            for (long i = 0; i < go.size(); ++i) gb[i] += go[i] * va[i];
        }
    });
}

NodeId scale(Graph& g, NodeId a, real k) {
    const Tensor& va = g.value(a);
    Tensor out(va.shape);
    for (long i = 0; i < out.size(); ++i) out[i] = va[i] * k;
    return g.make(std::move(out), {a}, [a, k](Graph& gg, NodeId self) {
        const Tensor& go = gg.grad(self);
        if (!gg.needs_grad(a)) return;
        Tensor& ga = gg.grad(a);
        for (long i = 0; i < go.size(); ++i) ga[i] += go[i] * k;
    });
}

NodeId add_scalar(Graph& g, NodeId a, real k) {
    const Tensor& va = g.value(a);
    Tensor out(va.shape);
    for (long i = 0; i < out.size(); ++i) out[i] = va[i] + k;
    return g.make(std::move(out), {a}, [a](Graph& gg, NodeId self) {
        const Tensor& go = gg.grad(self);
        if (!gg.needs_grad(a)) return;
        Tensor& ga = gg.grad(a);
        for (long i = 0; i < go.size(); ++i) ga[i] += go[i];
    });
}

NodeId mul_const(Graph& g, NodeId a, const Tensor& c) {
    const Tensor& va = g.value(a);
    check_same_shape(va, c, "mul_const");
    Tensor out(va.shape);
    for (long i = 0; i < out.size(); ++i) out[i] = va[i] * c[i];
    auto cc = std::make_shared<Tensor>(c);
    return g.make(std::move(out), {a}, [a, cc](Graph& gg, NodeId self) {
        const Tensor& go = gg.grad(self);
        if (!gg.needs_grad(a)) return;
        Tensor& ga = gg.grad(a);
        for (long i = 0; i < go.size(); ++i) ga[i] += go[i] * (*cc)[i];
    });
}

NodeId activation(Graph& g, NodeId a, Activation kind) {
    const Tensor& va = g.value(a);
    Tensor out(va.shape);
    switch (kind) {
        case Activation::Relu:
            for (long i = 0; i < out.size(); ++i) out[i] = va[i] > 0 ? va[i] : 0;
            break;
        case Activation::Tanh:
            for (long i = 0; i < out.size(); ++i) out[i] = std::tanh(va[i]);
            break;
        case Activation::Sigmoid:
            for (long i = 0; i < out.size(); ++i) out[i] = real(1) / (real(1) + std::exp(-va[i]));
            break;
    }
    return g.make(std::move(out), {a}, [a, kind](Graph& gg, NodeId self) {
        if (!gg.needs_grad(a)) return;
        const Tensor& go = gg.grad(self);
        const Tensor& y = gg.value(self);
        const Tensor& x = gg.value(a);
        Tensor& ga = gg.grad(a);
        switch (kind) {
            case Activation::Relu:
                for (long i = 0; i < go.size(); ++i) ga[i] += x[i] > 0 ? go[i] : 0;
                break;
            case Activation::Tanh:
                for (long i = 0; i < go.size(); ++i) ga[i] += go[i] * (1 - y[i] * y[i]);
                break;
            case Activation::Sigmoid:
                for (long i = 0; i < go.size(); ++i) ga[i] += go[i] * y[i] * (1 - y[i]);
                break;
        }
    });
}

NodeId softmax(Graph& g, NodeId a, int axis) {
    const Tensor& va = g.value(a);
    if (axis < 0 || axis >= va.ndim()) throw ShapeError("softmax: axis out of range");
    long outer = 1, inner = 1;
    const int L = va.dim(axis);
    for (int i = 0; i < axis; ++i) outer *= va.dim(i);
    for (int i = axis + 1; i < va.ndim(); ++i) inner *= va.dim(i);

    Tensor out(va.shape);
    for (long o = 0; o < outer; ++o) {
        for (long in = 0; in < inner; ++in) {
            const long base = o * L * inner + in;
            real mx = va[base];
            for (int l = 1; l < L; ++l) mx = std::max(mx, va[base + l * inner]);
            real denom = 0;
            for (int l = 0; l < L; ++l) {
                const real e = std::exp(va[base + l * inner] - mx);
                out[base + l * inner] = e;
                denom += e;
            }
            for (int l = 0; l < L; ++l) out[base + l * inner] /= denom;
        }
    }
    return g.make(std::move(out), {a}, [a, outer, inner, L](Graph& gg, NodeId self) {
        if (!gg.needs_grad(a)) return;
        const Tensor& go = gg.grad(self);
        const Tensor& y = gg.value(self);
        Tensor& ga = gg.grad(a);
        for (long o = 0; o < outer; ++o) {
            for (long in = 0; in < inner; ++in) {
                const long base = o * L * inner + in;
                real dot = 0;
                for (int l = 0; l < L; ++l) dot += go[base + l * inner] * y[base + l * inner];
                for (int l = 0; l < L; ++l) {
                    const long idx = base + l * inner;
                    ga[idx] += y[idx] * (go[idx] - dot);
                }
            }
        }
    });
}

NodeId sum(Graph& g, NodeId a) {
    const Tensor& va = g.value(a);
    real s = 0;
    for (long i = 0; i < va.size(); ++i) s += va[i];
    return g.make(Tensor::scalar(s), {a}, [a](Graph& gg, NodeId self) {
        if (!gg.needs_grad(a)) return;
        const real go = gg.grad(self)[0];
        Tensor& ga = gg.grad(a);
        for (long i = 0; i < ga.size(); ++i) ga[i] += go;
    });
}

NodeId reshape(Graph& g, NodeId a, std::vector<int> shape) {
    const Tensor& va = g.value(a);
    if (shape_size(shape) != va.size())
        throw ShapeError("reshape: element count mismatch " + shape_str(va.shape) + " -> " +
                         shape_str(shape));
    Tensor out(std::move(shape), va.data);
    return g.make(std::move(out), {a}, [a](Graph& gg, NodeId self) {
        if (!gg.needs_grad(a)) return;
        const Tensor& go = gg.grad(self);
        Tensor& ga = gg.grad(a);
        for (long i = 0; i < go.size(); ++i) ga[i] += go[i];
    });
}

NodeId detach(Graph& g, NodeId a) { return g.input(g.value(a)); }

NodeId fully_connected(Graph& g, NodeId x, NodeId W, NodeId b) {
    const Tensor& vx = g.value(x);
    const Tensor& vW = g.value(W);
    const Tensor& vb = g.value(b);
    if (vW.ndim() != 2) throw ShapeError("fully_connected: weights must be 2-D");
    const int N = static_cast<int>(vx.size());
    const int M = vW.dim(1);
    if (vW.dim(0) != N || vb.size() != M)
        throw ShapeError("fully_connected: dimension mismatch, input " + shape_str(vx.shape) +
                         ", weights " + shape_str(vW.shape) + ", bias " + shape_str(vb.shape));
    Tensor out({M});
    for (int j = 0; j < M; ++j) out[j] = vb[j];
    matmul(vx.data.data(), vW.data.data(), out.data.data(), 1, N, M);
    return g.make(std::move(out), {x, W, b}, [x, W, b, N, M](Graph& gg, NodeId self) {
        const Tensor& go = gg.grad(self);
        const Tensor& vx = gg.value(x);
        const Tensor& vW = gg.value(W);
        if (gg.needs_grad(x))
            matmul_nt(go.data.data(), vW.data.data(), gg.grad(x).data.data(), 1, M, N);
        if (gg.needs_grad(W))
            matmul_tn(vx.data.data(), go.data.data(), gg.grad(W).data.data(), 1, N, M);
        if (gg.needs_grad(b)) {
            Tensor& gb = gg.grad(b);
            for (int j = 0; j < M; ++j) gb[j] += go[j];
        }
    });
}

NodeId conv2d(Graph& g, NodeId x, NodeId kernels, int stride) {
    const Tensor& vx = g.value(x);
    const Tensor& vK = g.value(kernels);
    if (vx.ndim() != 3) throw ShapeError("conv2d: input must be HxWxC");
    if (vK.ndim() != 4) throw ShapeError("conv2d: kernels must be KhxKwxCinxCout");
    if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
    const int H = vx.dim(0), W = vx.dim(1), Cin = vx.dim(2);
    const int Kh = vK.dim(0), Kw = vK.dim(1), Cout = vK.dim(3);
    if (vK.dim(2) != Cin)
        throw ShapeError("conv2d: channel mismatch, input has " + std::to_string(Cin) +
                         ", kernels expect " + std::to_string(vK.dim(2)));
    if (Kh > H || Kw > W)
        throw ShapeError("conv2d: kernel " + std::to_string(Kh) + "x" + std::to_string(Kw) +
                         " larger than input " + std::to_string(H) + "x" + std::to_string(W));
    const int Ho = conv_out_extent(H, Kh, stride);
    const int Wo = conv_out_extent(W, Kw, stride);
    const int R = Ho * Wo;
    const int Kc = Kh * Kw * Cin;

    // im2col: each output position gathers its receptive field into one row,
    // ordered (kh, kw, cin) to match the kernel tensor's layout.
    auto cols = std::make_shared<Tensor>(std::vector<int>{R, Kc});
    {
        real* cr = cols->data.data();
        for (int oh = 0; oh < Ho; ++oh) {
            for (int ow = 0; ow < Wo; ++ow) {
                for (int kh = 0; kh < Kh; ++kh) {
                    const real* src = &vx.data[((static_cast<size_t>(oh * stride + kh)) * W +
                                                ow * stride) * Cin];
                    for (long t = 0; t < static_cast<long>(Kw) * Cin; ++t) cr[t] = src[t];
                    cr += static_cast<long>(Kw) * Cin;
                }
            }
        }
    }
    Tensor out({Ho, Wo, Cout});
    matmul(cols->data.data(), vK.data.data(), out.data.data(), R, Kc, Cout);

    return g.make(std::move(out), {x, kernels},
                  [x, kernels, cols, stride, H, W, Cin, Kh, Kw, Cout, Ho, Wo, R,
                   Kc](Graph& gg, NodeId self) {
                      const Tensor& go = gg.grad(self);  // Ho x Wo x Cout, flat R x Cout
                      const Tensor& vK = gg.value(kernels);
                      if (gg.needs_grad(kernels))
                          matmul_tn(cols->data.data(), go.data.data(),
                                    gg.grad(kernels).data.data(), R, Kc, Cout);
                      if (gg.needs_grad(x)) {
                          Tensor dcols({R, Kc});
                          matmul_nt(go.data.data(), vK.data.data(), dcols.data.data(), R, Cout,
                                    Kc);
                          Tensor& gx = gg.grad(x);
                          const real* cr = dcols.data.data();
                          for (int oh = 0; oh < Ho; ++oh) {
                              for (int ow = 0; ow < Wo; ++ow) {
                                  for (int kh = 0; kh < Kh; ++kh) {
                                      real* dst = &gx.data[((static_cast<size_t>(oh * stride + kh)) * W +
                                                            ow * stride) * Cin];
                                      for (long t = 0; t < static_cast<long>(Kw) * Cin; ++t)
                                          dst[t] += cr[t];
                                      cr += static_cast<long>(Kw) * Cin;
                                  }
                              }
                          }
                      }
                  });
}

NodeId pad2d(Graph& g, NodeId x, int pad) {
    const Tensor& vx = g.value(x);
    if (vx.ndim() != 3) throw ShapeError("pad2d: input must be HxWxC");
    if (pad < 0) throw ShapeError("pad2d: pad must be non-negative");
    if (pad == 0) return x;
    const int H = vx.dim(0), W = vx.dim(1), C = vx.dim(2);
    Tensor out({H + 2 * pad, W + 2 * pad, C}, 0);
    for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w)
            for (int c = 0; c < C; ++c) out.at(h + pad, w + pad, c) = vx.at(h, w, c);
    return g.make(std::move(out), {x}, [x, pad, H, W, C](Graph& gg, NodeId self) {
        if (!gg.needs_grad(x)) return;
        const Tensor& go = gg.grad(self);
        Tensor& gx = gg.grad(x);
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w)
                for (int c = 0; c < C; ++c) gx.at(h, w, c) += go.at(h + pad, w + pad, c);
    });
}

NodeId add_channel_bias(Graph& g, NodeId x, NodeId bias) {
    const Tensor& vx = g.value(x);
    const Tensor& vb = g.value(bias);
    if (vx.ndim() != 3) throw ShapeError("add_channel_bias: input must be HxWxC");
    const int H = vx.dim(0), W = vx.dim(1), C = vx.dim(2);
    if (vb.size() != C) throw ShapeError("add_channel_bias: bias length must equal channels");
    Tensor out(vx.shape);
    for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w)
            for (int c = 0; c < C; ++c) out.at(h, w, c) = vx.at(h, w, c) + vb[c];
    return g.make(std::move(out), {x, bias}, [x, bias, H, W, C](Graph& gg, NodeId self) {
        const Tensor& go = gg.grad(self);
        if (gg.needs_grad(x)) {
            Tensor& gx = gg.grad(x);
            for (long i = 0; i < go.size(); ++i) gx[i] += go[i];
        }
        if (gg.needs_grad(bias)) {
            Tensor& gb = gg.grad(bias);
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < W; ++w)
                    for (int c = 0; c < C; ++c) gb[c] += go.at(h, w, c);
        }
    });
}

namespace {
void check_pool_args(const Tensor& vx, int window, int stride) {
    if (vx.ndim() != 3) throw ShapeError("pool: input must be HxWxC");
    if (window < 1) throw ShapeError("pool: window must be >= 1");
    if (stride < 1) throw ShapeError("pool: stride must be >= 1");
    if (window > vx.dim(0) || window > vx.dim(1))
        throw ShapeError("pool: window larger than input");
}
}  // namespace

NodeId pool_avg(Graph& g, NodeId x, int window, int stride) {
    const Tensor& vx = g.value(x);
    check_pool_args(vx, window, stride);
    const int H = vx.dim(0), W = vx.dim(1), C = vx.dim(2);
    const int Ho = conv_out_extent(H, window, stride);
    const int Wo = conv_out_extent(W, window, stride);
    Tensor out({Ho, Wo, C});
    const real inv = real(1) / (real(window) * window);
    for (int oh = 0; oh < Ho; ++oh)
        for (int ow = 0; ow < Wo; ++ow)
            for (int c = 0; c < C; ++c) {
                real acc = 0;
                for (int kh = 0; kh < window; ++kh)
                    for (int kw = 0; kw < window; ++kw)
                        acc += vx.at(oh * stride + kh, ow * stride + kw, c);
                out.at(oh, ow, c) = acc * inv;
            }
    return g.make(std::move(out), {x},
                  [x, window, stride, Ho, Wo, C, inv](Graph& gg, NodeId self) {
                      if (!gg.needs_grad(x)) return;
                      const Tensor& go = gg.grad(self);
                      Tensor& gx = gg.grad(x);
                      for (int oh = 0; oh < Ho; ++oh)
                          for (int ow = 0; ow < Wo; ++ow)
                              for (int c = 0; c < C; ++c) {
                                  const real gv = go.at(oh, ow, c) * inv;
                                  for (int kh = 0; kh < window; ++kh)
                                      for (int kw = 0; kw < window; ++kw)
                                          gx.at(oh * stride + kh, ow * stride + kw, c) += gv;
                              }
                  });
}

NodeId pool_max(Graph& g, NodeId x, int window, int stride) {
    const Tensor& vx = g.value(x);
    check_pool_args(vx, window, stride);
    const int H = vx.dim(0), W = vx.dim(1), C = vx.dim(2);
    const int Ho = conv_out_extent(H, window, stride);
    const int Wo = conv_out_extent(W, window, stride);
    Tensor out({Ho, Wo, C});
    // Row-major first occurrence wins ties.
    auto argmax = std::make_shared<std::vector<long>>(static_cast<size_t>(out.size()));
    for (int oh = 0; oh < Ho; ++oh)
        for (int ow = 0; ow < Wo; ++ow)
            for (int c = 0; c < C; ++c) {
                real best = -std::numeric_limits<real>::infinity();
                long best_idx = -1;
                for (int kh = 0; kh < window; ++kh)
                    for (int kw = 0; kw < window; ++kw) {
                        const long idx =
                            ((static_cast<long>(oh * stride + kh)) * W + ow * stride + kw) * C + c;
                        if (vx[idx] > best) {
                            best = vx[idx];
                            best_idx = idx;
                        }
                    }
                out.at(oh, ow, c) = best;
                (*argmax)[static_cast<size_t>((static_cast<long>(oh) * Wo + ow) * C + c)] = best_idx;
            }
    return g.make(std::move(out), {x}, [x, argmax](Graph& gg, NodeId self) {
        if (!gg.needs_grad(x)) return;
        const Tensor& go = gg.grad(self);
        Tensor& gx = gg.grad(x);
        for (long i = 0; i < go.size(); ++i) gx[(*argmax)[static_cast<size_t>(i)]] += go[i];
    });
}

NodeId global_avg_pool(Graph& g, NodeId x) {
    const Tensor& vx = g.value(x);
    if (vx.ndim() != 3) throw ShapeError("global_avg_pool: input must be HxWxC");
    const int H = vx.dim(0), W = vx.dim(1), C = vx.dim(2);
    const real inv = real(1) / (real(H) * W);
    Tensor out({C});
    for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w)
            for (int c = 0; c < C; ++c) out[c] += vx.at(h, w, c);
    for (int c = 0; c < C; ++c) out[c] *= inv;
    return g.make(std::move(out), {x}, [x, H, W, C, inv](Graph& gg, NodeId self) {
        if (!gg.needs_grad(x)) return;
        const Tensor& go = gg.grad(self);
        Tensor& gx = gg.grad(x);
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w)
                for (int c = 0; c < C; ++c) gx.at(h, w, c) += go[c] * inv;
    });
}

NodeId row_norms(Graph& g, NodeId m) {
    const Tensor& vm = g.value(m);
    if (vm.ndim() != 2) throw ShapeError("row_norms: input must be RxD");
    const int R = vm.dim(0), D = vm.dim(1);
    Tensor out({R});
    for (int r = 0; r < R; ++r) {
        real n2 = 0;
        for (int d = 0; d < D; ++d) n2 += vm.at(r, d) * vm.at(r, d);
        out[r] = std::sqrt(n2);
    }
    return g.make(std::move(out), {m}, [m, R, D](Graph& gg, NodeId self) {
        if (!gg.needs_grad(m)) return;
        const Tensor& go = gg.grad(self);
        const Tensor& vm = gg.value(m);
        const Tensor& n = gg.value(self);
        Tensor& gm = gg.grad(m);
        for (int r = 0; r < R; ++r) {
            const real guard = std::sqrt(n[r] * n[r] + kNormGuard);
            const real k = go[r] / guard;
            for (int d = 0; d < D; ++d) gm.at(r, d) += k * vm.at(r, d);
        }
    });
}

NodeId squash_rows(Graph& g, NodeId m) {
    const Tensor& vm = g.value(m);
    if (vm.ndim() != 2) throw ShapeError("squash_rows: input must be RxD");
    const int R = vm.dim(0), D = vm.dim(1);
    Tensor out(vm.shape);
    for (int r = 0; r < R; ++r) {
        real n2 = 0;
        for (int d = 0; d < D; ++d) n2 += vm.at(r, d) * vm.at(r, d);
        // v = s * ||s|| / (1 + ||s||^2); exact 0 at s = 0.
        const real f = std::sqrt(n2) / (1 + n2);
        for (int d = 0; d < D; ++d) out.at(r, d) = vm.at(r, d) * f;
    }
    return g.make(std::move(out), {m}, [m, R, D](Graph& gg, NodeId self) {
        if (!gg.needs_grad(m)) return;
        const Tensor& go = gg.grad(self);
        const Tensor& vm = gg.value(m);
        Tensor& gm = gg.grad(m);
        for (int r = 0; r < R; ++r) {
            real n2 = 0, sdotg = 0;
            for (int d = 0; d < D; ++d) {
                n2 += vm.at(r, d) * vm.at(r, d);
                sdotg += vm.at(r, d) * go.at(r, d);
            }
            const real guard = std::sqrt(n2 + kNormGuard);
            const real f = std::sqrt(n2) / (1 + n2);
            const real k = sdotg * (1 - n2) / (guard * (1 + n2) * (1 + n2));
            for (int d = 0; d < D; ++d) gm.at(r, d) += f * go.at(r, d) + k * vm.at(r, d);
        }
    });
}

NodeId caps_transform(Graph& g, NodeId u, NodeId W) {
    const Tensor& vu = g.value(u);
    const Tensor& vW = g.value(W);
    if (vu.ndim() != 2 || vW.ndim() != 4)
        throw ShapeError("caps_transform: expected u NxD1 and W NxCxD1xD2");
    const int N = vu.dim(0), D1 = vu.dim(1);
    if (vW.dim(0) != N || vW.dim(2) != D1)
        throw ShapeError("caps_transform: weight shape " + shape_str(vW.shape) +
                         " incompatible with input " + shape_str(vu.shape));
    const int C = vW.dim(1), D2 = vW.dim(3);
    Tensor out({N, C, D2});
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < C; ++j)
            for (int d1 = 0; d1 < D1; ++d1) {
                const real uv = vu.at(i, d1);
                for (int d2 = 0; d2 < D2; ++d2)
                    out.at(i, j, d2) += uv * vW.at(i, j, d1, d2);
            }
    return g.make(std::move(out), {u, W}, [u, W, N, C, D1, D2](Graph& gg, NodeId self) {
        const Tensor& go = gg.grad(self);
        const Tensor& vu = gg.value(u);
        const Tensor& vW = gg.value(W);
        if (gg.needs_grad(u)) {
            Tensor& gu = gg.grad(u);
            for (int i = 0; i < N; ++i)
                for (int j = 0; j < C; ++j)
                    for (int d1 = 0; d1 < D1; ++d1) {
                        real acc = 0;
                        for (int d2 = 0; d2 < D2; ++d2)
                            acc += vW.at(i, j, d1, d2) * go.at(i, j, d2);
                        gu.at(i, d1) += acc;
                    }
        }
        if (gg.needs_grad(W)) {
            Tensor& gW = gg.grad(W);
            for (int i = 0; i < N; ++i)
                for (int j = 0; j < C; ++j)
                    for (int d1 = 0; d1 < D1; ++d1) {
                        const real uv = vu.at(i, d1);
                        for (int d2 = 0; d2 < D2; ++d2)
                            gW.at(i, j, d1, d2) += uv * go.at(i, j, d2);
                    }
        }
    });
}

NodeId caps_weighted_sum(Graph& g, NodeId c, NodeId u_hat) {
    const Tensor& vc = g.value(c);
    const Tensor& vu = g.value(u_hat);
    if (vc.ndim() != 2 || vu.ndim() != 3)
        throw ShapeError("caps_weighted_sum: expected c NxC and u_hat NxCxD2");
    const int N = vc.dim(0), C = vc.dim(1), D2 = vu.dim(2);
    if (vu.dim(0) != N || vu.dim(1) != C)
        throw ShapeError("caps_weighted_sum: shape mismatch");
    Tensor out({C, D2});
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < C; ++j) {
            const real cv = vc.at(i, j);
            for (int d = 0; d < D2; ++d) out.at(j, d) += cv * vu.at(i, j, d);
        }
    return g.make(std::move(out), {c, u_hat}, [c, u_hat, N, C, D2](Graph& gg, NodeId self) {
        const Tensor& go = gg.grad(self);
        const Tensor& vc = gg.value(c);
        const Tensor& vu = gg.value(u_hat);
        if (gg.needs_grad(c)) {
            Tensor& gc = gg.grad(c);
            for (int i = 0; i < N; ++i)
                for (int j = 0; j < C; ++j) {
                    real acc = 0;
                    for (int d = 0; d < D2; ++d) acc += vu.at(i, j, d) * go.at(j, d);
                    gc.at(i, j) += acc;
                }
        }
        if (gg.needs_grad(u_hat)) {
            Tensor& gu = gg.grad(u_hat);
            for (int i = 0; i < N; ++i)
                for (int j = 0; j < C; ++j) {
                    const real cv = vc.at(i, j);
                    for (int d = 0; d < D2; ++d) gu.at(i, j, d) += cv * go.at(j, d);
                }
        }
    });
}

NodeId caps_agreement(Graph& g, NodeId u_hat, NodeId v) {
    const Tensor& vu = g.value(u_hat);
    const Tensor& vv = g.value(v);
    if (vu.ndim() != 3 || vv.ndim() != 2)
        throw ShapeError("caps_agreement: expected u_hat NxCxD2 and v CxD2");
    const int N = vu.dim(0), C = vu.dim(1), D2 = vu.dim(2);
    if (vv.dim(0) != C || vv.dim(1) != D2) throw ShapeError("caps_agreement: shape mismatch");
    Tensor out({N, C});
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < C; ++j) {
            real acc = 0;
            for (int d = 0; d < D2; ++d) acc += vu.at(i, j, d) * vv.at(j, d);
            out.at(i, j) = acc;
        }
    return g.make(std::move(out), {u_hat, v}, [u_hat, v, N, C, D2](Graph& gg, NodeId self) {
        const Tensor& go = gg.grad(self);
        const Tensor& vu = gg.value(u_hat);
        const Tensor& vv = gg.value(v);
        if (gg.needs_grad(u_hat)) {
            Tensor& gu = gg.grad(u_hat);
            for (int i = 0; i < N; ++i)
                for (int j = 0; j < C; ++j) {
                    const real gv = go.at(i, j);
                    for (int d = 0; d < D2; ++d) gu.at(i, j, d) += gv * vv.at(j, d);
                }
        }
        if (gg.needs_grad(v)) {
            Tensor& gvt = gg.grad(v);
            for (int i = 0; i < N; ++i)
                for (int j = 0; j < C; ++j) {
                    const real gv = go.at(i, j);
                    for (int d = 0; d < D2; ++d) gvt.at(j, d) += gv * vu.at(i, j, d);
                }
        }
    });
}

NodeId mask_rows(Graph& g, NodeId m, int keep_row) {
    const Tensor& vm = g.value(m);
    if (vm.ndim() != 2) throw ShapeError("mask_rows: input must be RxD");
    const int R = vm.dim(0), D = vm.dim(1);
    if (keep_row < 0 || keep_row >= R) throw ShapeError("mask_rows: row index out of range");
    Tensor out(vm.shape, 0);
    for (int d = 0; d < D; ++d) out.at(keep_row, d) = vm.at(keep_row, d);
    return g.make(std::move(out), {m}, [m, keep_row, D](Graph& gg, NodeId self) {
        if (!gg.needs_grad(m)) return;
        const Tensor& go = gg.grad(self);
        Tensor& gm = gg.grad(m);
        for (int d = 0; d < D; ++d) gm.at(keep_row, d) += go.at(keep_row, d);
    });
}

NodeId batch_norm_train(Graph& g, NodeId x, NodeId gamma, NodeId beta, real eps,
                        Tensor* batch_mean, Tensor* batch_var) {
    const Tensor& vx = g.value(x);
    const Tensor& vg = g.value(gamma);
    const Tensor& vb = g.value(beta);
    if (vx.ndim() != 3) throw ShapeError("batch_norm: input must be HxWxC");
    const int H = vx.dim(0), W = vx.dim(1), C = vx.dim(2);
    if (vg.size() != C || vb.size() != C) throw ShapeError("batch_norm: gamma/beta must be C");
    const long N = static_cast<long>(H) * W;
    Tensor mean({C}), var({C});
    for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w)
            for (int c = 0; c < C; ++c) mean[c] += vx.at(h, w, c);
    for (int c = 0; c < C; ++c) mean[c] /= static_cast<real>(N);
    for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w)
            for (int c = 0; c < C; ++c) {
                const real d = vx.at(h, w, c) - mean[c];
                var[c] += d * d;
            }
    for (int c = 0; c < C; ++c) var[c] /= static_cast<real>(N);
    if (batch_mean) *batch_mean = mean;
    if (batch_var) *batch_var = var;

    auto inv_std = std::make_shared<Tensor>(std::vector<int>{C});
    for (int c = 0; c < C; ++c) (*inv_std)[c] = real(1) / std::sqrt(var[c] + eps);
    auto xhat = std::make_shared<Tensor>(vx.shape);
    Tensor out(vx.shape);
    for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w)
            for (int c = 0; c < C; ++c) {
                const real xh = (vx.at(h, w, c) - mean[c]) * (*inv_std)[c];
                xhat->at(h, w, c) = xh;
                out.at(h, w, c) = vg[c] * xh + vb[c];
            }
    return g.make(std::move(out), {x, gamma, beta},
                  [x, gamma, beta, xhat, inv_std, H, W, C, N](Graph& gg, NodeId self) {
                      const Tensor& go = gg.grad(self);
                      const Tensor& vg = gg.value(gamma);
                      Tensor gsum({C}), gxhat_sum({C});
                      for (int h = 0; h < H; ++h)
                          for (int w = 0; w < W; ++w)
                              for (int c = 0; c < C; ++c) {
                                  gsum[c] += go.at(h, w, c);
                                  gxhat_sum[c] += go.at(h, w, c) * xhat->at(h, w, c);
                              }
                      if (gg.needs_grad(gamma)) {
                          Tensor& ggam = gg.grad(gamma);
                          for (int c = 0; c < C; ++c) ggam[c] += gxhat_sum[c];
                      }
                      if (gg.needs_grad(beta)) {
                          Tensor& gbet = gg.grad(beta);
                          for (int c = 0; c < C; ++c) gbet[c] += gsum[c];
                      }
                      if (gg.needs_grad(x)) {
                          Tensor& gx = gg.grad(x);
                          const real invN = real(1) / static_cast<real>(N);
                          for (int h = 0; h < H; ++h)
                              for (int w = 0; w < W; ++w)
                                  for (int c = 0; c < C; ++c) {
                                      const real term = go.at(h, w, c) - gsum[c] * invN -
                                                        xhat->at(h, w, c) * gxhat_sum[c] * invN;
                                      gx.at(h, w, c) += vg[c] * (*inv_std)[c] * term;
                                  }
                      }
                  });
}

NodeId channel_affine(Graph& g, NodeId x, const Tensor& scl, const Tensor& shift) {
    const Tensor& vx = g.value(x);
    if (vx.ndim() != 3) throw ShapeError("channel_affine: input must be HxWxC");
    const int H = vx.dim(0), W = vx.dim(1), C = vx.dim(2);
    if (scl.size() != C || shift.size() != C)
        throw ShapeError("channel_affine: scale/shift must be C");
    Tensor out(vx.shape);
    for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w)
            for (int c = 0; c < C; ++c) out.at(h, w, c) = vx.at(h, w, c) * scl[c] + shift[c];
    auto s = std::make_shared<Tensor>(scl);
    return g.make(std::move(out), {x}, [x, s, H, W, C](Graph& gg, NodeId self) {
        if (!gg.needs_grad(x)) return;
        const Tensor& go = gg.grad(self);
        Tensor& gx = gg.grad(x);
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w)
                for (int c = 0; c < C; ++c) gx.at(h, w, c) += go.at(h, w, c) * (*s)[c];
    });
}

NodeId softmax_cross_entropy(Graph& g, NodeId logits, int label) {
    const Tensor& vl = g.value(logits);
    const int C = static_cast<int>(vl.size());
    if (label < 0 || label >= C) throw DataError("cross_entropy: label out of range");
    real mx = vl[0];
    for (int i = 1; i < C; ++i) mx = std::max(mx, vl[i]);
    real denom = 0;
    for (int i = 0; i < C; ++i) denom += std::exp(vl[i] - mx);
    const real loss = mx + std::log(denom) - vl[label];
    return g.make(Tensor::scalar(loss), {logits}, [logits, label, C, mx, denom](Graph& gg,
                                                                                NodeId self) {
        if (!gg.needs_grad(logits)) return;
        const real go = gg.grad(self)[0];
        const Tensor& vl = gg.value(logits);
        Tensor& gl = gg.grad(logits);
        for (int i = 0; i < C; ++i) {
            const real p = std::exp(vl[i] - mx) / denom;
            gl[i] += go * (p - (i == label ? 1 : 0));
        }
    });
}

}  // namespace capsbench
