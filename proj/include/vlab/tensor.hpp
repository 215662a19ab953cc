#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "vlab/rng.hpp"

namespace vlab {

enum class RunMode { train, eval };

inline std::string shape_str(const std::vector<size_t>& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

// Dense row-major tensor. `node` is the tape handle; -1 means the value is a
// plain constant and nothing is recorded through it.
template <typename T>
struct Tensor {
    std::vector<size_t> shape;
    std::vector<T> data;
    bool requires_grad = false;
    int64_t node = -1;

    Tensor() = default;
    explicit Tensor(std::vector<size_t> shp)
        : shape(std::move(shp)), data(numel_of(shape), T(0)) {}
    Tensor(std::vector<size_t> shp, std::vector<T> values)
        : shape(std::move(shp)), data(std::move(values)) {
        if (numel_of(shape) != data.size())
            throw std::invalid_argument("tensor: shape " + shape_str(shape) +
                                        " does not match " + std::to_string(data.size()) +
                                        " values");
    }

    static size_t numel_of(const std::vector<size_t>& shp) {
        size_t n = 1;
        for (size_t e : shp) n *= e;
        return n;
    }

    size_t numel() const { return data.size(); }
    size_t rows() const { return shape.at(0); }
    size_t cols() const { return shape.at(1); }
    bool tracked() const { return node >= 0; }

    T& at(size_t i, size_t j) { return data[i * cols() + j]; }
    T at(size_t i, size_t j) const { return data[i * cols() + j]; }
};

template <typename T>
void debug_check_finite(const Tensor<T>& t) {
#ifndef NDEBUG
    for (T v : t.data) assert(std::isfinite(double(v)) && "non-finite value after forward op");
#else
    (void)t;
#endif
}

// Reverse-mode tape. Nodes are appended in evaluation order, so the list is
// topologically sorted by construction; backward walks it once in reverse.
template <typename T>
class Tape {
public:
    using BackwardFn = std::function<void(Tape<T>&, std::span<const T>)>;

    // Registers a trainable tensor as a leaf with a zero gradient slot.
    int64_t leaf(Tensor<T>& t) {
        t.node = push(t.numel(), nullptr);
        return t.node;
    }

    int64_t push(size_t size, BackwardFn back) {
        nodes_.push_back(Node{std::move(back), std::vector<T>(size, T(0))});
        return int64_t(nodes_.size()) - 1;
    }

    std::span<T> grad_mut(int64_t id) { return nodes_.at(size_t(id)).grad; }
    std::span<const T> grad(int64_t id) const { return nodes_.at(size_t(id)).grad; }

    std::span<const T> grad(const Tensor<T>& t) const {
        static const std::vector<T> empty;
        if (!t.tracked()) return empty;
        return grad(t.node);
    }

    // Seeds d(loss)/d(loss) = 1 and propagates. The loss must be scalar; a
    // completely constant loss (never recorded) is legal and leaves all
    // gradients at zero.
    void backward(const Tensor<T>& loss) {
        if (loss.numel() != 1)
            throw std::invalid_argument("backward: loss must be scalar, got " +
                                        shape_str(loss.shape));
        if (!loss.tracked()) return;
        nodes_.at(size_t(loss.node)).grad[0] = T(1);
        for (int64_t i = loss.node; i >= 0; --i) {
            Node& n = nodes_[size_t(i)];
            if (n.back) n.back(*this, n.grad);
        }
    }

    size_t num_nodes() const { return nodes_.size(); }

private:
    struct Node {
        BackwardFn back;
        std::vector<T> grad;
    };
    std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// raw kernels
// ---------------------------------------------------------------------------

namespace kernels {

// C = A(n,k) * B(k,m)
template <typename T>
void matmul_nn(const T* a, const T* b, T* c, size_t n, size_t k, size_t m) {
    for (size_t i = 0; i < n; ++i) {
        T* ci = c + i * m;
        for (size_t j = 0; j < m; ++j) ci[j] = T(0);
        const T* ai = a + i * k;
        for (size_t l = 0; l < k; ++l) {
            const T ail = ai[l];
            const T* bl = b + l * m;
            for (size_t j = 0; j < m; ++j) ci[j] += ail * bl[j];
        }
    }
}

// C += A(n,k) * B(k,m)
template <typename T>
void matmul_nn_acc(const T* a, const T* b, T* c, size_t n, size_t k, size_t m) {
    for (size_t i = 0; i < n; ++i) {
        T* ci = c + i * m;
        const T* ai = a + i * k;
        for (size_t l = 0; l < k; ++l) {
            const T ail = ai[l];
            const T* bl = b + l * m;
            for (size_t j = 0; j < m; ++j) ci[j] += ail * bl[j];
        }
    }
}

// C = A(n,k) * B(m,k)^T
template <typename T>
void matmul_nt(const T* a, const T* b, T* c, size_t n, size_t k, size_t m) {
    for (size_t i = 0; i < n; ++i) {
        const T* ai = a + i * k;
        T* ci = c + i * m;
        for (size_t j = 0; j < m; ++j) {
            const T* bj = b + j * k;
            T acc = T(0);
            for (size_t l = 0; l < k; ++l) acc += ai[l] * bj[l];
            ci[j] = acc;
        }
    }
}

// C += A(n,k) * B(m,k)^T
template <typename T>
void matmul_nt_acc(const T* a, const T* b, T* c, size_t n, size_t k, size_t m) {
    for (size_t i = 0; i < n; ++i) {
        const T* ai = a + i * k;
        T* ci = c + i * m;
        for (size_t j = 0; j < m; ++j) {
            const T* bj = b + j * k;
            T acc = T(0);
            for (size_t l = 0; l < k; ++l) acc += ai[l] * bj[l];
            ci[j] += acc;
        }
    }
}

// C(k,m) += A(n,k)^T * B(n,m)
template <typename T>
void matmul_tn_acc(const T* a, const T* b, T* c, size_t n, size_t k, size_t m) {
    for (size_t i = 0; i < n; ++i) {
        const T* ai = a + i * k;
        const T* bi = b + i * m;
        for (size_t l = 0; l < k; ++l) {
            const T ail = ai[l];
            T* cl = c + l * m;
            for (size_t j = 0; j < m; ++j) cl[j] += ail * bi[j];
        }
    }
}

// In-place numerically stable softmax over one row of length k.
template <typename T>
void softmax_row(T* row, size_t k) {
    T mx = row[0];
    for (size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    T sum = T(0);
    for (size_t j = 0; j < k; ++j) {
        row[j] = std::exp(row[j] - mx);
        sum += row[j];
    }
    const T inv = T(1) / sum;
    for (size_t j = 0; j < k; ++j) row[j] *= inv;
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// differentiable ops
// ---------------------------------------------------------------------------

template <typename T>
void require_2d(const Tensor<T>& t, const char* op) {
    if (t.shape.size() != 2)
        throw std::invalid_argument(std::string(op) + ": expected 2-d tensor, got " +
                                    shape_str(t.shape));
}

template <typename T>
bool should_record(const Tape<T>* tape, std::initializer_list<const Tensor<T>*> inputs) {
    if (!tape) return false;
    for (const Tensor<T>* t : inputs)
        if (t->tracked()) return true;
    return false;
}

template <typename T>
Tensor<T> matmul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    if (a.cols() != b.rows())
        throw std::invalid_argument("matmul: inner extents disagree: " + shape_str(a.shape) +
                                    " vs " + shape_str(b.shape));
    const size_t n = a.rows(), k = a.cols(), m = b.cols();
    Tensor<T> out({n, m});
    kernels::matmul_nn(a.data.data(), b.data.data(), out.data.data(), n, k, m);
    debug_check_finite(out);
    if (should_record(tape, {&a, &b})) {
        out.node = tape->push(out.numel(),
                              [an = a.node, bn = b.node, ad = a.data, bd = b.data, n, k,
                               m](Tape<T>& tp, std::span<const T> g) {
                                  if (an >= 0)  // dA += g * B^T
                                      kernels::matmul_nt_acc(g.data(), bd.data(),
                                                             tp.grad_mut(an).data(), n, m, k);
                                  if (bn >= 0)  // dB += A^T * g
                                      kernels::matmul_tn_acc(ad.data(), g.data(),
                                                             tp.grad_mut(bn).data(), n, k, m);
                              });
    }
    return out;
}

// out = x * w^T for w stored as [d_out, d_in]; the layout every linear layer uses.
template <typename T>
Tensor<T> matmul_nt(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& w) {
    require_2d(x, "matmul_nt");
    require_2d(w, "matmul_nt");
    if (x.cols() != w.cols())
        throw std::invalid_argument("matmul_nt: inner extents disagree: " + shape_str(x.shape) +
                                    " vs " + shape_str(w.shape));
    const size_t n = x.rows(), k = x.cols(), m = w.rows();
    Tensor<T> out({n, m});
    kernels::matmul_nt(x.data.data(), w.data.data(), out.data.data(), n, k, m);
    debug_check_finite(out);
    if (should_record(tape, {&x, &w})) {
        out.node = tape->push(out.numel(),
                              [xn = x.node, wn = w.node, xd = x.data, wd = w.data, n, k,
                               m](Tape<T>& tp, std::span<const T> g) {
                                  if (xn >= 0)  // dX += g * W
                                      kernels::matmul_nn_acc(g.data(), wd.data(),
                                                             tp.grad_mut(xn).data(), n, m, k);
                                  if (wn >= 0)  // dW += g^T * X
                                      kernels::matmul_tn_acc(g.data(), xd.data(),
                                                             tp.grad_mut(wn).data(), n, m, k);
                              });
    }
    return out;
}

template <typename T>
Tensor<T> add(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape != b.shape)
        throw std::invalid_argument("add: shapes disagree: " + shape_str(a.shape) + " vs " +
                                    shape_str(b.shape));
    Tensor<T> out = a;
    out.node = -1;
    for (size_t i = 0; i < out.numel(); ++i) out.data[i] += b.data[i];
    debug_check_finite(out);
    if (should_record(tape, {&a, &b})) {
        out.node = tape->push(out.numel(), [an = a.node, bn = b.node](Tape<T>& tp,
                                                                      std::span<const T> g) {
            if (an >= 0) {
                auto da = tp.grad_mut(an);
                for (size_t i = 0; i < g.size(); ++i) da[i] += g[i];
            }
            if (bn >= 0) {
                auto db = tp.grad_mut(bn);
                for (size_t i = 0; i < g.size(); ++i) db[i] += g[i];
            }
        });
    }
    return out;
}

// Broadcasts a length-d bias over the rows of x.
template <typename T>
Tensor<T> add_bias(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& bias) {
    require_2d(x, "add_bias");
    if (bias.numel() != x.cols())
        throw std::invalid_argument("add_bias: bias extent " + shape_str(bias.shape) +
                                    " does not match columns of " + shape_str(x.shape));
    const size_t n = x.rows(), d = x.cols();
    Tensor<T> out = x;
    out.node = -1;
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < d; ++j) out.data[i * d + j] += bias.data[j];
    debug_check_finite(out);
    if (should_record(tape, {&x, &bias})) {
        out.node = tape->push(out.numel(), [xn = x.node, bn = bias.node, n,
                                            d](Tape<T>& tp, std::span<const T> g) {
            if (xn >= 0) {
                auto dx = tp.grad_mut(xn);
                for (size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
            }
            if (bn >= 0) {
                auto db = tp.grad_mut(bn);
                for (size_t i = 0; i < n; ++i)
                    for (size_t j = 0; j < d; ++j) db[j] += g[i * d + j];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> scale(Tape<T>* tape, const Tensor<T>& x, T factor) {
    Tensor<T> out = x;
    out.node = -1;
    for (T& v : out.data) v *= factor;
    debug_check_finite(out);
    if (should_record(tape, {&x})) {
        out.node =
            tape->push(out.numel(), [xn = x.node, factor](Tape<T>& tp, std::span<const T> g) {
                auto dx = tp.grad_mut(xn);
                for (size_t i = 0; i < g.size(); ++i) dx[i] += factor * g[i];
            });
    }
    return out;
}

// Elementwise product with a constant mask; gradients do not flow into the mask.
// This is how dropout masks are applied.
template <typename T>
Tensor<T> apply_mask(Tape<T>* tape, const Tensor<T>& x, std::vector<T> mask) {
    if (mask.size() != x.numel())
        throw std::invalid_argument("apply_mask: mask size " + std::to_string(mask.size()) +
                                    " does not match " + shape_str(x.shape));
    Tensor<T> out = x;
    out.node = -1;
    for (size_t i = 0; i < out.numel(); ++i) out.data[i] *= mask[i];
    debug_check_finite(out);
    if (should_record(tape, {&x})) {
        out.node = tape->push(out.numel(), [xn = x.node, m = std::move(mask)](
                                               Tape<T>& tp, std::span<const T> g) {
            auto dx = tp.grad_mut(xn);
            for (size_t i = 0; i < g.size(); ++i) dx[i] += m[i] * g[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> transpose(Tape<T>* tape, const Tensor<T>& x) {
    require_2d(x, "transpose");
    const size_t n = x.rows(), m = x.cols();
    Tensor<T> out({m, n});
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < m; ++j) out.data[j * n + i] = x.data[i * m + j];
    if (should_record(tape, {&x})) {
        out.node = tape->push(out.numel(), [xn = x.node, n, m](Tape<T>& tp,
                                                               std::span<const T> g) {
            auto dx = tp.grad_mut(xn);
            for (size_t j = 0; j < m; ++j)
                for (size_t i = 0; i < n; ++i) dx[i * m + j] += g[j * n + i];
        });
    }
    return out;
}

// Exact GELU, x * Phi(x).
template <typename T>
Tensor<T> gelu(Tape<T>* tape, const Tensor<T>& x) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    Tensor<T> out = x;
    out.node = -1;
    for (size_t i = 0; i < out.numel(); ++i) {
        const double v = double(x.data[i]);
        out.data[i] = T(v * 0.5 * (1.0 + std::erf(v * inv_sqrt2)));
    }
    debug_check_finite(out);
    if (should_record(tape, {&x})) {
        out.node = tape->push(out.numel(), [xn = x.node, xd = x.data](Tape<T>& tp,
                                                                      std::span<const T> g) {
            auto dx = tp.grad_mut(xn);
            for (size_t i = 0; i < g.size(); ++i) {
                const double v = double(xd[i]);
                const double phi = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
                const double dens = inv_sqrt2pi * std::exp(-0.5 * v * v);
                dx[i] += T(double(g[i]) * (phi + v * dens));
            }
        });
    }
    return out;
}

// Row-wise layer normalization with learnable gain/bias.
template <typename T>
Tensor<T> layer_norm(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps = T(1e-5)) {
    require_2d(x, "layer_norm");
    const size_t n = x.rows(), d = x.cols();
    if (gamma.numel() != d || beta.numel() != d)
        throw std::invalid_argument("layer_norm: gain/bias extent does not match " +
                                    shape_str(x.shape));
    Tensor<T> out({n, d});
    std::vector<T> xhat(n * d);
    std::vector<T> inv_std(n);
    for (size_t i = 0; i < n; ++i) {
        const T* xi = x.data.data() + i * d;
        T mean = T(0);
        for (size_t j = 0; j < d; ++j) mean += xi[j];
        mean /= T(d);
        T var = T(0);
        for (size_t j = 0; j < d; ++j) {
            const T c = xi[j] - mean;
            var += c * c;
        }
        var /= T(d);
        const T inv = T(1) / std::sqrt(var + eps);
        inv_std[i] = inv;
        for (size_t j = 0; j < d; ++j) {
            const T h = (xi[j] - mean) * inv;
            xhat[i * d + j] = h;
            out.data[i * d + j] = gamma.data[j] * h + beta.data[j];
        }
    }
    debug_check_finite(out);
    if (should_record(tape, {&x, &gamma, &beta})) {
        out.node = tape->push(
            out.numel(),
            [xn = x.node, gn = gamma.node, bn = beta.node, gd = gamma.data,
             xh = std::move(xhat), is = std::move(inv_std), n, d](Tape<T>& tp,
                                                                  std::span<const T> g) {
                for (size_t i = 0; i < n; ++i) {
                    const T* gi = g.data() + i * d;
                    const T* hi = xh.data() + i * d;
                    if (xn >= 0) {
                        auto dx = tp.grad_mut(xn);
                        T mean_dh = T(0), mean_dhh = T(0);
                        for (size_t j = 0; j < d; ++j) {
                            const T dh = gi[j] * gd[j];
                            mean_dh += dh;
                            mean_dhh += dh * hi[j];
                        }
                        mean_dh /= T(d);
                        mean_dhh /= T(d);
                        for (size_t j = 0; j < d; ++j) {
                            const T dh = gi[j] * gd[j];
                            dx[i * d + j] += is[i] * (dh - mean_dh - hi[j] * mean_dhh);
                        }
                    }
                    if (gn >= 0) {
                        auto dg = tp.grad_mut(gn);
                        for (size_t j = 0; j < d; ++j) dg[j] += gi[j] * hi[j];
                    }
                    if (bn >= 0) {
                        auto db = tp.grad_mut(bn);
                        for (size_t j = 0; j < d; ++j) db[j] += gi[j];
                    }
                }
            });
    }
    return out;
}

// Gathers rows of an embedding table; ids are constants.
template <typename T>
Tensor<T> embedding(Tape<T>* tape, const Tensor<T>& table, std::span<const int32_t> ids) {
    require_2d(table, "embedding");
    const size_t v = table.rows(), d = table.cols(), n = ids.size();
    for (int32_t id : ids)
        if (id < 0 || size_t(id) >= v)
            throw std::out_of_range("embedding: id " + std::to_string(id) +
                                    " outside table " + shape_str(table.shape));
    Tensor<T> out({n, d});
    for (size_t i = 0; i < n; ++i)
        std::copy_n(table.data.data() + size_t(ids[i]) * d, d, out.data.data() + i * d);
    if (should_record(tape, {&table})) {
        std::vector<int32_t> idv(ids.begin(), ids.end());
        out.node = tape->push(out.numel(), [tn = table.node, idv = std::move(idv),
                                            d](Tape<T>& tp, std::span<const T> g) {
            auto dt = tp.grad_mut(tn);
            for (size_t i = 0; i < idv.size(); ++i) {
                T* row = dt.data() + size_t(idv[i]) * d;
                const T* gi = g.data() + i * d;
                for (size_t j = 0; j < d; ++j) row[j] += gi[j];
            }
        });
    }
    return out;
}

// Repeats a [s, d] block `reps` times along rows; used to add one positional
// table to every sequence in a batch.
template <typename T>
Tensor<T> tile_rows(Tape<T>* tape, const Tensor<T>& x, size_t reps) {
    require_2d(x, "tile_rows");
    const size_t s = x.rows(), d = x.cols();
    Tensor<T> out({s * reps, d});
    for (size_t r = 0; r < reps; ++r)
        std::copy_n(x.data.data(), s * d, out.data.data() + r * s * d);
    if (should_record(tape, {&x})) {
        out.node = tape->push(out.numel(), [xn = x.node, s, d, reps](Tape<T>& tp,
                                                                     std::span<const T> g) {
            auto dx = tp.grad_mut(xn);
            for (size_t r = 0; r < reps; ++r) {
                const T* gr = g.data() + r * s * d;
                for (size_t i = 0; i < s * d; ++i) dx[i] += gr[i];
            }
        });
    }
    return out;
}

// [batch*s, d] -> [batch, d], averaging over the s rows of each group.
template <typename T>
Tensor<T> mean_pool(Tape<T>* tape, const Tensor<T>& x, size_t batch) {
    require_2d(x, "mean_pool");
    if (batch == 0 || x.rows() % batch != 0)
        throw std::invalid_argument("mean_pool: rows of " + shape_str(x.shape) +
                                    " not divisible by batch " + std::to_string(batch));
    const size_t s = x.rows() / batch, d = x.cols();
    Tensor<T> out({batch, d});
    const T inv = T(1) / T(s);
    for (size_t b = 0; b < batch; ++b) {
        T* ob = out.data.data() + b * d;
        for (size_t i = 0; i < s; ++i) {
            const T* xi = x.data.data() + (b * s + i) * d;
            for (size_t j = 0; j < d; ++j) ob[j] += xi[j];
        }
        for (size_t j = 0; j < d; ++j) ob[j] *= inv;
    }
    if (should_record(tape, {&x})) {
        out.node = tape->push(out.numel(), [xn = x.node, batch, s, d, inv](
                                               Tape<T>& tp, std::span<const T> g) {
            auto dx = tp.grad_mut(xn);
            for (size_t b = 0; b < batch; ++b) {
                const T* gb = g.data() + b * d;
                for (size_t i = 0; i < s; ++i) {
                    T* xi = dx.data() + (b * s + i) * d;
                    for (size_t j = 0; j < d; ++j) xi[j] += inv * gb[j];
                }
            }
        });
    }
    return out;
}

// Fused bidirectional multi-head scaled dot-product attention. q, k, v are
// [batch*seq, dim] with heads laid out as contiguous column blocks.
template <typename T>
Tensor<T> attention(Tape<T>* tape, const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                    size_t batch, size_t heads) {
    require_2d(q, "attention");
    if (q.shape != k.shape || q.shape != v.shape)
        throw std::invalid_argument("attention: q/k/v shapes disagree: " + shape_str(q.shape) +
                                    " vs " + shape_str(k.shape) + " vs " + shape_str(v.shape));
    const size_t dim = q.cols();
    if (batch == 0 || q.rows() % batch != 0)
        throw std::invalid_argument("attention: rows not divisible by batch");
    if (heads == 0 || dim % heads != 0)
        throw std::invalid_argument("attention: dim " + std::to_string(dim) +
                                    " not divisible by heads " + std::to_string(heads));
    const size_t seq = q.rows() / batch;
    const size_t hd = dim / heads;
    const T sc = T(1) / std::sqrt(T(hd));

    Tensor<T> out({batch * seq, dim});
    // Softmax matrices saved for backward: one [seq, seq] block per (batch, head).
    std::vector<T> attn(batch * heads * seq * seq);

    auto block = [&](const std::vector<T>& src, size_t b, size_t h, size_t row) -> const T* {
        return src.data() + (b * seq + row) * dim + h * hd;
    };

    for (size_t b = 0; b < batch; ++b) {
        for (size_t h = 0; h < heads; ++h) {
            T* a = attn.data() + (b * heads + h) * seq * seq;
            for (size_t i = 0; i < seq; ++i) {
                const T* qi = block(q.data, b, h, i);
                T* ai = a + i * seq;
                for (size_t j = 0; j < seq; ++j) {
                    const T* kj = block(k.data, b, h, j);
                    T dot = T(0);
                    for (size_t l = 0; l < hd; ++l) dot += qi[l] * kj[l];
                    ai[j] = dot * sc;
                }
                kernels::softmax_row(ai, seq);
                T* oi = out.data.data() + (b * seq + i) * dim + h * hd;
                for (size_t j = 0; j < seq; ++j) {
                    const T aij = ai[j];
                    const T* vj = block(v.data, b, h, j);
                    for (size_t l = 0; l < hd; ++l) oi[l] += aij * vj[l];
                }
            }
        }
    }
    debug_check_finite(out);

    if (should_record(tape, {&q, &k, &v})) {
        out.node = tape->push(
            out.numel(),
            [qn = q.node, kn = k.node, vn = v.node, qd = q.data, kd = k.data, vd = v.data,
             attn = std::move(attn), batch, heads, seq, hd, dim,
             sc](Tape<T>& tp, std::span<const T> g) {
                std::vector<T> da(seq), ds(seq);
                for (size_t b = 0; b < batch; ++b) {
                    for (size_t h = 0; h < heads; ++h) {
                        const T* a = attn.data() + (b * heads + h) * seq * seq;
                        for (size_t i = 0; i < seq; ++i) {
                            const T* gi = g.data() + (b * seq + i) * dim + h * hd;
                            const T* ai = a + i * seq;
                            // dV += a^T g  and  da = g V^T
                            T dot_aa = T(0);
                            for (size_t j = 0; j < seq; ++j) {
                                const T* vj = vd.data() + (b * seq + j) * dim + h * hd;
                                T acc = T(0);
                                for (size_t l = 0; l < hd; ++l) acc += gi[l] * vj[l];
                                da[j] = acc;
                                dot_aa += acc * ai[j];
                            }
                            if (vn >= 0) {
                                auto dv = tp.grad_mut(vn);
                                for (size_t j = 0; j < seq; ++j) {
                                    T* dvj = dv.data() + (b * seq + j) * dim + h * hd;
                                    const T aij = ai[j];
                                    for (size_t l = 0; l < hd; ++l) dvj[l] += aij * gi[l];
                                }
                            }
                            // softmax backward, then the 1/sqrt(hd) scale
                            for (size_t j = 0; j < seq; ++j)
                                ds[j] = ai[j] * (da[j] - dot_aa) * sc;
                            if (qn >= 0) {
                                auto dq = tp.grad_mut(qn);
                                T* dqi = dq.data() + (b * seq + i) * dim + h * hd;
                                for (size_t j = 0; j < seq; ++j) {
                                    const T* kj = kd.data() + (b * seq + j) * dim + h * hd;
                                    const T dsj = ds[j];
                                    for (size_t l = 0; l < hd; ++l) dqi[l] += dsj * kj[l];
                                }
                            }
                            if (kn >= 0) {
                                auto dk = tp.grad_mut(kn);
                                const T* qi = qd.data() + (b * seq + i) * dim + h * hd;
                                for (size_t j = 0; j < seq; ++j) {
                                    T* dkj = dk.data() + (b * seq + j) * dim + h * hd;
                                    const T dsj = ds[j];
                                    for (size_t l = 0; l < hd; ++l) dkj[l] += dsj * qi[l];
                                }
                            }
                        }
                    }
                }
            });
    }
    return out;
}

// Mean negative log-likelihood over rows with a max-subtracted log-softmax.
// Backward is (softmax - onehot) / n.
template <typename T>
Tensor<T> softmax_cross_entropy(Tape<T>* tape, const Tensor<T>& logits,
                                std::span<const int32_t> labels) {
    require_2d(logits, "softmax_cross_entropy");
    const size_t n = logits.rows(), kk = logits.cols();
    if (labels.size() != n)
        throw std::invalid_argument("softmax_cross_entropy: got " +
                                    std::to_string(labels.size()) + " labels for " +
                                    shape_str(logits.shape));
    for (int32_t l : labels)
        if (l < 0 || size_t(l) >= kk)
            throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(l) +
                                    " outside [0, " + std::to_string(kk) + ")");
    std::vector<T> probs(n * kk);
    T total = T(0);
    for (size_t i = 0; i < n; ++i) {
        const T* li = logits.data.data() + i * kk;
        T mx = li[0];
        for (size_t j = 1; j < kk; ++j) mx = std::max(mx, li[j]);
        T sum = T(0);
        for (size_t j = 0; j < kk; ++j) {
            probs[i * kk + j] = std::exp(li[j] - mx);
            sum += probs[i * kk + j];
        }
        const T inv = T(1) / sum;
        for (size_t j = 0; j < kk; ++j) probs[i * kk + j] *= inv;
        total += std::log(sum) - (li[size_t(labels[i])] - mx);
    }
    Tensor<T> out({1});
    out.data[0] = total / T(n);
    if (should_record(tape, {&logits})) {
        std::vector<int32_t> lv(labels.begin(), labels.end());
        out.node = tape->push(1, [ln = logits.node, probs = std::move(probs),
                                  lv = std::move(lv), n, kk](Tape<T>& tp, std::span<const T> g) {
            auto dl = tp.grad_mut(ln);
            const T w = g[0] / T(n);
            for (size_t i = 0; i < n; ++i)
                for (size_t j = 0; j < kk; ++j) {
                    T p = probs[i * kk + j];
                    if (j == size_t(lv[i])) p -= T(1);
                    dl[i * kk + j] += w * p;
                }
        });
    }
    return out;
}

// Plain (untaped) row softmax for turning logits into prediction probabilities.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
    require_2d(logits, "softmax_rows");
    Tensor<T> out = logits;
    out.node = -1;
    for (size_t i = 0; i < out.rows(); ++i)
        kernels::softmax_row(out.data.data() + i * out.cols(), out.cols());
    return out;
}

// Inverted-dropout keep mask: 1/(1-p) with probability 1-p, else 0.
template <typename T>
std::vector<T> dropout_mask(size_t n, double p, RngStream& rng) {
    if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout_mask: p must be in [0, 1)");
    std::vector<T> mask(n);
    const T keep = T(1.0 / (1.0 - p));
    for (size_t i = 0; i < n; ++i) mask[i] = rng.uniform() < p ? T(0) : keep;
    return mask;
}

}  // namespace vlab
