#include "kwsrl/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "blas.hpp"

namespace kwsrl::nn {

namespace {

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b)
{
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
}

template <typename T>
Graph<T>& graph_of(std::initializer_list<Var<T>> vars)
{
    Graph<T>* g = vars.begin()->graph;
    for (const auto& v : vars)
        if (v.graph != g) throw LogicError("operands belong to different graphs");
    return *g;
}

// Elementwise op whose derivative is a function of (input, output).
template <typename T, typename Forward, typename Deriv>
Var<T> elementwise(Var<T> a, Forward f, Deriv d)
{
    const Tensor<T>& x = a.value();
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
    return a.graph->record(std::move(out), {a},
                           [a, d](Graph<T>& g, const Tensor<T>& y, const Tensor<T>& gy) {
                               const Tensor<T>& x = g.value(a);
                               Tensor<T>& gx = g.grad(a);
                               for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * d(x[i], y[i]);
                           });
}

// Splits x into (batch, len, ch) for rank-2 or rank-3 tensors.
struct BatchLayout {
    std::size_t batch, len, ch;
};

template <typename T>
BatchLayout batch_layout(const char* op, const Tensor<T>& x)
{
    if (x.rank() == 2) return {1, x.dim(0), x.dim(1)};
    if (x.rank() == 3) return {x.dim(0), x.dim(1), x.dim(2)};
    throw ShapeError(std::string(op) + ": expected [len, ch] or [batch, len, ch], got " +
                     shape_string(x.shape()));
}

}  // namespace

template <typename T>
Var<T> add(Var<T> a, Var<T> b)
{
    Graph<T>& g = graph_of({a, b});
    require_same_shape("add", a.value(), b.value());
    Tensor<T> out = a.value();
    const Tensor<T>& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return g.record(std::move(out), {a, b}, [a, b](Graph<T>& g, const Tensor<T>&, const Tensor<T>& gy) {
        for (Var<T> v : {a, b}) {
            if (!g.requires_grad(v)) continue;
            Tensor<T>& gv = g.grad(v);
            for (std::size_t i = 0; i < gy.size(); ++i) gv[i] += gy[i];
        }
    });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b)
{
    Graph<T>& g = graph_of({a, b});
    require_same_shape("mul", a.value(), b.value());
    Tensor<T> out = a.value();
    const Tensor<T>& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    return g.record(std::move(out), {a, b}, [a, b](Graph<T>& g, const Tensor<T>&, const Tensor<T>& gy) {
        const Tensor<T>& av = g.value(a);
        const Tensor<T>& bv = g.value(b);
        if (g.requires_grad(a)) {
            Tensor<T>& ga = g.grad(a);
            for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * bv[i];
        }
        if (g.requires_grad(b)) {
            Tensor<T>& gb = g.grad(b);
            for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * av[i];
        }
    });
}

template <typename T>
Var<T> scale(Var<T> a, T factor)
{
    return elementwise(a, [factor](T x) { return x * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Var<T> sum(Var<T> a)
{
    Accum total = 0;
    for (T x : a.value().data()) total += x;
    Tensor<T> out({1}, static_cast<T>(total));
    return a.graph->record(std::move(out), {a}, [a](Graph<T>& g, const Tensor<T>&, const Tensor<T>& gy) {
        Tensor<T>& ga = g.grad(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[0];
    });
}

template <typename T>
Var<T> sigmoid(Var<T> a)
{
    return elementwise(
        a, [](T x) { return T(1) / (T(1) + std::exp(-x)); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> tanh(Var<T> a)
{
    return elementwise(a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Var<T> relu(Var<T> a)
{
    return elementwise(
        a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> dense(Var<T> x, Var<T> weight, Var<T> bias)
{
    Graph<T>& g = graph_of({x, weight, bias});
    const Tensor<T>& xv = x.value();
    const Tensor<T>& w = weight.value();
    const Tensor<T>& b = bias.value();
    if (w.rank() != 2 || b.rank() != 1 || b.dim(0) != w.dim(0) || xv.rank() < 1 || xv.rank() > 2 ||
        xv.shape().back() != w.dim(1))
        throw ShapeError("dense: incompatible shapes x" + shape_string(xv.shape()) + " W" +
                         shape_string(w.shape()) + " b" + shape_string(b.shape()));
    const std::size_t rows = xv.rank() == 2 ? xv.dim(0) : 1;
    const std::size_t in = w.dim(1), out_dim = w.dim(0);

    Tensor<T> out(xv.rank() == 2 ? Shape{rows, out_dim} : Shape{out_dim});
    for (std::size_t n = 0; n < rows; ++n) std::copy_n(b.data().begin(), out_dim, out.data().begin() + n * out_dim);
    // out[rows, out] += x[rows, in] * W^T
    blas::gemm(false, true, rows, out_dim, in, xv.data().data(), w.data().data(), T(1), out.data().data());

    return g.record(std::move(out), {x, weight, bias},
                    [x, weight, bias, rows, in, out_dim](Graph<T>& g, const Tensor<T>&, const Tensor<T>& gy) {
                        if (g.requires_grad(bias)) {
                            Tensor<T>& gb = g.grad(bias);
                            for (std::size_t o = 0; o < out_dim; ++o) {
                                Accum acc = 0;
                                for (std::size_t n = 0; n < rows; ++n) acc += gy[n * out_dim + o];
                                gb[o] += static_cast<T>(acc);
                            }
                        }
                        if (g.requires_grad(weight))  // gW[out, in] += gy^T x
                            blas::gemm(true, false, out_dim, in, rows, gy.data().data(), g.value(x).data().data(),
                                       T(1), g.grad(weight).data().data());
                        if (g.requires_grad(x))  // gx[rows, in] += gy W
                            blas::gemm(false, false, rows, in, out_dim, gy.data().data(),
                                       g.value(weight).data().data(), T(1), g.grad(x).data().data());
                    });
}

template <typename T>
Var<T> matvec(Var<T> weight, Var<T> x)
{
    Graph<T>& g = graph_of({weight, x});
    const Tensor<T>& w = weight.value();
    const Tensor<T>& xv = x.value();
    if (w.rank() != 2 || xv.rank() != 1 || xv.dim(0) != w.dim(1))
        throw ShapeError("matvec: incompatible shapes W" + shape_string(w.shape()) + " x" +
                         shape_string(xv.shape()));
    const std::size_t out_dim = w.dim(0), in = w.dim(1);
    Tensor<T> out({out_dim});
    for (std::size_t o = 0; o < out_dim; ++o) {
        const T* wr = w.data().data() + o * in;
        Accum acc = 0;
        for (std::size_t i = 0; i < in; ++i) acc += static_cast<Accum>(wr[i]) * xv[i];
        out[o] = static_cast<T>(acc);
    }
    return g.record(std::move(out), {weight, x},
                    [weight, x, out_dim, in](Graph<T>& g, const Tensor<T>&, const Tensor<T>& gy) {
                        const Tensor<T>& w = g.value(weight);
                        const Tensor<T>& xv = g.value(x);
                        if (g.requires_grad(weight)) {
                            Tensor<T>& gw = g.grad(weight);
                            for (std::size_t o = 0; o < out_dim; ++o) {
                                const T d = gy[o];
                                T* gwr = gw.data().data() + o * in;
                                for (std::size_t i = 0; i < in; ++i) gwr[i] += d * xv[i];
                            }
                        }
                        if (g.requires_grad(x)) {
                            Tensor<T>& gx = g.grad(x);
                            std::vector<Accum> acc(in, 0.0);
                            for (std::size_t o = 0; o < out_dim; ++o) {
                                const Accum d = gy[o];
                                const T* wr = w.data().data() + o * in;
                                for (std::size_t i = 0; i < in; ++i) acc[i] += d * wr[i];
                            }
                            for (std::size_t i = 0; i < in; ++i) gx[i] += static_cast<T>(acc[i]);
                        }
                    });
}

namespace {

// Rows of [batch * len, k * c_in] patches with zero padding, matching the
// [k, c_in, c_out] kernel layout.
template <typename T>
void im2col(const T* x, std::size_t batch, std::size_t len, std::size_t cin, std::size_t k, T* cols)
{
    const std::size_t pad = (k - 1) / 2, width = k * cin;
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t l = 0; l < len; ++l) {
            T* r = cols + (b * len + l) * width;
            for (std::size_t j = 0; j < k; ++j) {
                const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(l + j) - static_cast<std::ptrdiff_t>(pad);
                if (src < 0 || src >= static_cast<std::ptrdiff_t>(len))
                    std::fill_n(r + j * cin, cin, T(0));
                else
                    std::copy_n(x + (b * len + static_cast<std::size_t>(src)) * cin, cin, r + j * cin);
            }
        }
}

template <typename T>
void col2im_add(const T* cols, std::size_t batch, std::size_t len, std::size_t cin, std::size_t k, T* gx)
{
    const std::size_t pad = (k - 1) / 2, width = k * cin;
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t l = 0; l < len; ++l) {
            const T* r = cols + (b * len + l) * width;
            for (std::size_t j = 0; j < k; ++j) {
                const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(l + j) - static_cast<std::ptrdiff_t>(pad);
                if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
                T* dst = gx + (b * len + static_cast<std::size_t>(src)) * cin;
                for (std::size_t c = 0; c < cin; ++c) dst[c] += r[j * cin + c];
            }
        }
}

}  // namespace

template <typename T>
Var<T> conv1d(Var<T> x, Var<T> kernels, Var<T> bias)
{
    Graph<T>& g = graph_of({x, kernels, bias});
    const Tensor<T>& xv = x.value();
    const Tensor<T>& kv = kernels.value();
    const Tensor<T>& bv = bias.value();
    const BatchLayout lay = batch_layout("conv1d", xv);
    if (kv.rank() != 3 || kv.dim(1) != lay.ch || bv.rank() != 1 || bv.dim(0) != kv.dim(2))
        throw ShapeError("conv1d: incompatible shapes x" + shape_string(xv.shape()) + " kernels" +
                         shape_string(kv.shape()) + " b" + shape_string(bv.shape()));
    const std::size_t k = kv.dim(0);
    if (k % 2 == 0) throw ConfigError("conv1d: kernel size must be odd for same padding, got " + std::to_string(k));
    if (lay.len == 0) throw ShapeError("conv1d: empty input length");
    const std::size_t cin = lay.ch, cout = kv.dim(2), positions = lay.batch * lay.len, width = k * cin;

    std::vector<T> cols(positions * width);
    im2col(xv.data().data(), lay.batch, lay.len, cin, k, cols.data());
    Shape out_shape = xv.shape();
    out_shape.back() = cout;
    Tensor<T> out(out_shape);
    for (std::size_t p = 0; p < positions; ++p) std::copy_n(bv.data().begin(), cout, out.data().begin() + p * cout);
    blas::gemm(false, false, positions, cout, width, cols.data(), kv.data().data(), T(1), out.data().data());

    return g.record(
        std::move(out), {x, kernels, bias},
        [x, kernels, bias, lay, k, cin, cout, positions, width](Graph<T>& g, const Tensor<T>&, const Tensor<T>& gy) {
            if (g.requires_grad(bias)) {
                std::vector<Accum> gb(cout, 0.0);
                for (std::size_t p = 0; p < positions; ++p)
                    for (std::size_t co = 0; co < cout; ++co) gb[co] += gy[p * cout + co];
                Tensor<T>& gbt = g.grad(bias);
                for (std::size_t co = 0; co < cout; ++co) gbt[co] += static_cast<T>(gb[co]);
            }
            if (g.requires_grad(kernels)) {
                std::vector<T> cols(positions * width);
                im2col(g.value(x).data().data(), lay.batch, lay.len, cin, k, cols.data());
                blas::gemm(true, false, width, cout, positions, cols.data(), gy.data().data(), T(1),
                           g.grad(kernels).data().data());
            }
            if (g.requires_grad(x)) {
                std::vector<T> gcols(positions * width);
                blas::gemm(false, true, positions, width, cout, gy.data().data(), g.value(kernels).data().data(),
                           T(0), gcols.data());
                col2im_add(gcols.data(), lay.batch, lay.len, cin, k, g.grad(x).data().data());
            }
        });
}

template <typename T>
Var<T> maxpool1d(Var<T> x, std::size_t window)
{
    const Tensor<T>& xv = x.value();
    const BatchLayout lay = batch_layout("maxpool1d", xv);
    if (window < 1) throw ConfigError("maxpool1d: window must be >= 1");
    if (lay.len < window)
        throw ShapeError("maxpool1d: length " + std::to_string(lay.len) + " shorter than window " +
                         std::to_string(window));
    const std::size_t out_len = lay.len / window, ch = lay.ch;
    Shape out_shape = xv.shape();
    out_shape[out_shape.size() - 2] = out_len;
    Tensor<T> out(out_shape);
    std::vector<std::size_t> argmax(out.size());
    for (std::size_t b = 0; b < lay.batch; ++b)
        for (std::size_t p = 0; p < out_len; ++p)
            for (std::size_t c = 0; c < ch; ++c) {
                std::size_t best = (b * lay.len + p * window) * ch + c;
                for (std::size_t w = 1; w < window; ++w) {
                    const std::size_t idx = (b * lay.len + p * window + w) * ch + c;
                    if (xv[idx] > xv[best]) best = idx;
                }
                const std::size_t o = (b * out_len + p) * ch + c;
                out[o] = xv[best];
                argmax[o] = best;
            }
    return x.graph->record(std::move(out), {x},
                           [x, argmax = std::move(argmax)](Graph<T>& g, const Tensor<T>&, const Tensor<T>& gy) {
                               Tensor<T>& gx = g.grad(x);
                               for (std::size_t o = 0; o < gy.size(); ++o) gx[argmax[o]] += gy[o];
                           });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape)
{
    Tensor<T> out = x.value().reshaped(std::move(shape));
    return x.graph->record(std::move(out), {x}, [x](Graph<T>& g, const Tensor<T>&, const Tensor<T>& gy) {
        Tensor<T>& gx = g.grad(x);
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
    });
}

template <typename T>
Var<T> row(Var<T> x, std::size_t i)
{
    const Tensor<T>& xv = x.value();
    if (xv.rank() != 2 || i >= xv.dim(0))
        throw ShapeError("row: index " + std::to_string(i) + " out of range for " + shape_string(xv.shape()));
    const std::size_t m = xv.dim(1);
    Tensor<T> out({m});
    std::copy_n(xv.data().begin() + static_cast<std::ptrdiff_t>(i * m), m, out.data().begin());
    return x.graph->record(std::move(out), {x}, [x, i, m](Graph<T>& g, const Tensor<T>&, const Tensor<T>& gy) {
        Tensor<T>& gx = g.grad(x);
        for (std::size_t j = 0; j < m; ++j) gx[i * m + j] += gy[j];
    });
}

template <typename T>
Var<T> slice(Var<T> x, std::size_t offset, std::size_t length)
{
    const Tensor<T>& xv = x.value();
    if (xv.rank() != 1 || offset + length > xv.size())
        throw ShapeError("slice: [" + std::to_string(offset) + ", " + std::to_string(offset + length) +
                         ") out of range for " + shape_string(xv.shape()));
    Tensor<T> out({length});
    std::copy_n(xv.data().begin() + static_cast<std::ptrdiff_t>(offset), length, out.data().begin());
    return x.graph->record(std::move(out), {x},
                           [x, offset, length](Graph<T>& g, const Tensor<T>&, const Tensor<T>& gy) {
                               Tensor<T>& gx = g.grad(x);
                               for (std::size_t j = 0; j < length; ++j) gx[offset + j] += gy[j];
                           });
}

template <typename T>
Var<T> dropout(Var<T> x, double rate, bool training, Rng* rng)
{
    if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout: rate must be in [0, 1), got " + std::to_string(rate));
    if (!training || rate == 0.0) return x;
    if (!rng) throw LogicError("dropout: training mode needs a random generator");
    const Tensor<T>& xv = x.value();
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    Tensor<T> mask(xv.shape());
    Tensor<T> out(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) {
        mask[i] = rng->uniform() < rate ? T(0) : keep_scale;
        out[i] = xv[i] * mask[i];
    }
    return x.graph->record(std::move(out), {x},
                           [x, mask = std::move(mask)](Graph<T>& g, const Tensor<T>&, const Tensor<T>& gy) {
                               Tensor<T>& gx = g.grad(x);
                               for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * mask[i];
                           });
}

template <typename T>
Tensor<T> softmax_values(const Tensor<T>& logits)
{
    if ((logits.rank() != 1 && logits.rank() != 2) || logits.empty())
        throw ShapeError("softmax: expected a non-empty vector or [rows, classes], got " +
                         shape_string(logits.shape()));
    const std::size_t width = logits.shape().back(), rows = logits.size() / width;
    Tensor<T> out(logits.shape());
    std::vector<Accum> e(width);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* x = logits.data().data() + r * width;
        T top = x[0];
        for (std::size_t i = 1; i < width; ++i) top = std::max(top, x[i]);
        Accum total = 0;
        for (std::size_t i = 0; i < width; ++i) {
            e[i] = std::exp(static_cast<Accum>(x[i]) - top);
            total += e[i];
        }
        for (std::size_t i = 0; i < width; ++i) out[r * width + i] = static_cast<T>(e[i] / total);
    }
    return out;
}

template <typename T>
Var<T> softmax(Var<T> logits)
{
    return logits.graph->record(softmax_values(logits.value()), {logits},
                                [logits](Graph<T>& g, const Tensor<T>& y, const Tensor<T>& gy) {
                                    const std::size_t width = y.shape().back(), rows = y.size() / width;
                                    Tensor<T>& gx = g.grad(logits);
                                    for (std::size_t r = 0; r < rows; ++r) {
                                        const std::size_t o = r * width;
                                        Accum dot = 0;
                                        for (std::size_t i = 0; i < width; ++i)
                                            dot += static_cast<Accum>(gy[o + i]) * y[o + i];
                                        for (std::size_t i = 0; i < width; ++i)
                                            gx[o + i] += static_cast<T>(y[o + i] * (gy[o + i] - dot));
                                    }
                                });
}

template <typename T>
Var<T> cross_entropy(Var<T> probs, std::size_t target)
{
    const Tensor<T>& p = probs.value();
    if (p.rank() != 1 || target >= p.size())
        throw ShapeError("cross_entropy: target " + std::to_string(target) + " out of range for " +
                         shape_string(p.shape()));
    const std::size_t targets[] = {target};
    return cross_entropy(reshape(probs, {1, p.size()}), std::span<const std::size_t>(targets));
}

template <typename T>
Var<T> cross_entropy(Var<T> probs, std::span<const std::size_t> targets)
{
    const Tensor<T>& p = probs.value();
    if (p.rank() != 2 || p.dim(0) != targets.size() || targets.empty())
        throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for probabilities " +
                         shape_string(p.shape()));
    const std::size_t rows = p.dim(0), width = p.dim(1);
    constexpr Accum eps = 1e-12;
    std::vector<std::size_t> picks(rows);
    Accum total = 0;
    for (std::size_t r = 0; r < rows; ++r) {
        if (targets[r] >= width)
            throw ShapeError("cross_entropy: target " + std::to_string(targets[r]) + " out of range for " +
                             shape_string(p.shape()));
        picks[r] = r * width + targets[r];
        total -= std::log(static_cast<Accum>(p[picks[r]]) + eps);
    }
    Tensor<T> out({1}, static_cast<T>(total / static_cast<Accum>(rows)));
    return probs.graph->record(std::move(out), {probs},
                               [probs, picks = std::move(picks)](Graph<T>& g, const Tensor<T>&, const Tensor<T>& gy) {
                                   const Tensor<T>& p = g.value(probs);
                                   Tensor<T>& gp = g.grad(probs);
                                   const Accum scale = static_cast<Accum>(gy[0]) / static_cast<Accum>(picks.size());
                                   for (std::size_t k : picks)
                                       gp[k] += static_cast<T>(-scale / (static_cast<Accum>(p[k]) + eps));
                               });
}

template <typename T>
Var<T> huber(Var<T> pred, const Tensor<T>& target, double delta)
{
    require_same_shape("huber", pred.value(), target);
    if (target.empty()) throw ShapeError("huber: empty input");
    const Tensor<T>& p = pred.value();
    const std::size_t n = p.size();
    Accum total = 0;
    Tensor<T> dloss(p.shape());
    for (std::size_t i = 0; i < n; ++i) {
        const Accum e = static_cast<Accum>(p[i]) - target[i];
        const Accum ae = std::abs(e);
        total += ae <= delta ? 0.5 * e * e : delta * (ae - 0.5 * delta);
        const Accum d = ae <= delta ? e : (e > 0 ? delta : -delta);
        dloss[i] = static_cast<T>(d / static_cast<Accum>(n));
    }
    Tensor<T> out({1}, static_cast<T>(total / static_cast<Accum>(n)));
    return pred.graph->record(std::move(out), {pred},
                              [pred, dloss = std::move(dloss)](Graph<T>& g, const Tensor<T>&, const Tensor<T>& gy) {
                                  Tensor<T>& gp = g.grad(pred);
                                  for (std::size_t i = 0; i < dloss.size(); ++i) gp[i] += gy[0] * dloss[i];
                              });
}

namespace {

template <typename T>
T sigm(T x)
{
    return T(1) / (T(1) + std::exp(-x));
}

// Per-step activations kept for backpropagation through time.
template <typename T>
struct LstmTape {
    std::size_t batch, steps, in, hidden;
    std::vector<T> gates;  // [steps, batch, 4h] after the nonlinearities
    std::vector<T> cells;  // [steps, batch, h]
    std::vector<T> hs;     // [steps, batch, h]
};

}  // namespace

template <typename T>
Var<T> lstm(Var<T> x_seq, Var<T> input_weights, Var<T> recurrent_weights, Var<T> bias)
{
    Graph<T>& g = graph_of({x_seq, input_weights, recurrent_weights, bias});
    const Tensor<T>& xv = x_seq.value();
    const Tensor<T>& w = input_weights.value();
    const Tensor<T>& u = recurrent_weights.value();
    const Tensor<T>& b = bias.value();
    if ((xv.rank() != 2 && xv.rank() != 3) || xv.size() == 0)
        throw ShapeError("lstm: expected a non-empty [steps, in] or [batch, steps, in] sequence, got " +
                         shape_string(xv.shape()));
    if (u.rank() != 2 || u.dim(0) != 4 * u.dim(1))
        throw ShapeError("lstm: recurrent weights must be [4h, h], got " + shape_string(u.shape()));
    const bool batched = xv.rank() == 3;
    auto tape = std::make_shared<LstmTape<T>>();
    tape->batch = batched ? xv.dim(0) : 1;
    tape->steps = xv.dim(batched ? 1 : 0);
    tape->in = xv.shape().back();
    tape->hidden = u.dim(1);
    const std::size_t B = tape->batch, S = tape->steps, in = tape->in, H = tape->hidden, G = 4 * H;
    if (w.rank() != 2 || w.dim(0) != G || w.dim(1) != in || b.rank() != 1 || b.dim(0) != G)
        throw ShapeError("lstm: incompatible shapes x" + shape_string(xv.shape()) + " W" + shape_string(w.shape()) +
                         " b" + shape_string(b.shape()));

    // Input projections for every (batch, step) row in one product.
    std::vector<T> proj(B * S * G);
    for (std::size_t r = 0; r < B * S; ++r) std::copy_n(b.data().begin(), G, proj.begin() + r * G);
    blas::gemm(false, true, B * S, G, in, xv.data().data(), w.data().data(), T(1), proj.data());

    tape->gates.resize(S * B * G);
    tape->cells.resize(S * B * H);
    tape->hs.resize(S * B * H);
    for (std::size_t t = 0; t < S; ++t) {
        T* z = tape->gates.data() + t * B * G;
        for (std::size_t n = 0; n < B; ++n) std::copy_n(proj.begin() + (n * S + t) * G, G, z + n * G);
        if (t > 0) blas::gemm(false, true, B, G, H, tape->hs.data() + (t - 1) * B * H, u.data().data(), T(1), z);
        for (std::size_t n = 0; n < B; ++n) {
            T* zr = z + n * G;
            T* c = tape->cells.data() + (t * B + n) * H;
            T* h = tape->hs.data() + (t * B + n) * H;
            const T* c_prev = t > 0 ? tape->cells.data() + ((t - 1) * B + n) * H : nullptr;
            for (std::size_t j = 0; j < H; ++j) {
                const T i_g = sigm(zr[j]);
                const T f_g = sigm(zr[H + j]);
                const T cand = std::tanh(zr[2 * H + j]);
                const T o_g = sigm(zr[3 * H + j]);
                zr[j] = i_g;
                zr[H + j] = f_g;
                zr[2 * H + j] = cand;
                zr[3 * H + j] = o_g;
                c[j] = i_g * cand + (c_prev ? f_g * c_prev[j] : T(0));
                h[j] = o_g * std::tanh(c[j]);
            }
        }
    }
    Tensor<T> out(batched ? Shape{B, H} : Shape{H});
    std::copy_n(tape->hs.begin() + (S - 1) * B * H, B * H, out.data().begin());

    return g.record(
        std::move(out), {x_seq, input_weights, recurrent_weights, bias},
        [x_seq, input_weights, recurrent_weights, bias, tape](Graph<T>& g, const Tensor<T>&, const Tensor<T>& gy) {
            const std::size_t B = tape->batch, S = tape->steps, in = tape->in, H = tape->hidden, G = 4 * H;
            const Tensor<T>& u = g.value(recurrent_weights);
            std::vector<T> dproj(B * S * G);  // [batch, steps, 4h] pre-activation grads
            std::vector<T> dh(gy.data().begin(), gy.data().end());
            std::vector<T> dc(B * H, T(0));
            std::vector<T> dz(B * G);
            for (std::size_t t = S; t-- > 0;) {
                const T* a = tape->gates.data() + t * B * G;
                for (std::size_t n = 0; n < B; ++n) {
                    const T* ar = a + n * G;
                    const T* c = tape->cells.data() + (t * B + n) * H;
                    const T* c_prev = t > 0 ? tape->cells.data() + ((t - 1) * B + n) * H : nullptr;
                    T* dzr = dz.data() + n * G;
                    for (std::size_t j = 0; j < H; ++j) {
                        const T i_g = ar[j], f_g = ar[H + j], cand = ar[2 * H + j], o_g = ar[3 * H + j];
                        const T tc = std::tanh(c[j]);
                        const T dhj = dh[n * H + j];
                        const T dct = dc[n * H + j] + dhj * o_g * (T(1) - tc * tc);
                        dzr[j] = dct * cand * i_g * (T(1) - i_g);
                        dzr[H + j] = c_prev ? dct * c_prev[j] * f_g * (T(1) - f_g) : T(0);
                        dzr[2 * H + j] = dct * i_g * (T(1) - cand * cand);
                        dzr[3 * H + j] = dhj * tc * o_g * (T(1) - o_g);
                        dc[n * H + j] = dct * f_g;
                    }
                    std::copy_n(dzr, G, dproj.begin() + (n * S + t) * G);
                }
                if (t > 0) {
                    const T* h_prev = tape->hs.data() + (t - 1) * B * H;
                    if (g.requires_grad(recurrent_weights))
                        blas::gemm(true, false, G, H, B, dz.data(), h_prev, T(1),
                                   g.grad(recurrent_weights).data().data());
                    blas::gemm(false, false, B, H, G, dz.data(), u.data().data(), T(0), dh.data());
                }
            }
            if (g.requires_grad(bias)) {
                Tensor<T>& gb = g.grad(bias);
                for (std::size_t k = 0; k < G; ++k) {
                    Accum acc = 0;
                    for (std::size_t r = 0; r < B * S; ++r) acc += dproj[r * G + k];
                    gb[k] += static_cast<T>(acc);
                }
            }
            if (g.requires_grad(input_weights))
                blas::gemm(true, false, G, in, B * S, dproj.data(), g.value(x_seq).data().data(), T(1),
                           g.grad(input_weights).data().data());
            if (g.requires_grad(x_seq))
                blas::gemm(false, false, B * S, in, G, dproj.data(), g.value(input_weights).data().data(), T(1),
                           g.grad(x_seq).data().data());
        });
}

#define KWSRL_INSTANTIATE_OPS(T)                                                         \
    template Var<T> add(Var<T>, Var<T>);                                                 \
    template Var<T> mul(Var<T>, Var<T>);                                                 \
    template Var<T> scale(Var<T>, T);                                                    \
    template Var<T> sum(Var<T>);                                                         \
    template Var<T> sigmoid(Var<T>);                                                     \
    template Var<T> tanh(Var<T>);                                                        \
    template Var<T> relu(Var<T>);                                                        \
    template Var<T> dense(Var<T>, Var<T>, Var<T>);                                       \
    template Var<T> matvec(Var<T>, Var<T>);                                              \
    template Var<T> conv1d(Var<T>, Var<T>, Var<T>);                                      \
    template Var<T> maxpool1d(Var<T>, std::size_t);                                      \
    template Var<T> reshape(Var<T>, Shape);                                              \
    template Var<T> row(Var<T>, std::size_t);                                            \
    template Var<T> slice(Var<T>, std::size_t, std::size_t);                             \
    template Var<T> dropout(Var<T>, double, bool, Rng*);                                 \
    template Tensor<T> softmax_values(const Tensor<T>&);                                 \
    template Var<T> softmax(Var<T>);                                                     \
    template Var<T> cross_entropy(Var<T>, std::size_t);                                  \
    template Var<T> cross_entropy(Var<T>, std::span<const std::size_t>);                 \
    template Var<T> huber(Var<T>, const Tensor<T>&, double);                             \
    template Var<T> lstm(Var<T>, Var<T>, Var<T>, Var<T>);

KWSRL_INSTANTIATE_OPS(float)
KWSRL_INSTANTIATE_OPS(double)

#undef KWSRL_INSTANTIATE_OPS

}  // namespace kwsrl::nn
