#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "osteo/tensor.hpp"

namespace osteo {

namespace detail {

inline long ceil_div(long a, long b) {
    // b > 0
    return a >= 0 ? (a + b - 1) / b : -((-a) / b);
}

// Valid output range for one kernel tap, so inner loops need no bounds
// checks: in = o*stride + kpos - padding must stay in [0, in_dim).
inline void conv_tap_range(long kpos, long in_dim, long out_dim, long stride, long padding,
                           long& lo, long& hi) {
    lo = std::max<long>(0, ceil_div(padding - kpos, stride));
    hi = std::min<long>(out_dim - 1, (in_dim - 1 + padding - kpos) / stride);
}

template <typename S>
void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()) + " differ");
}

} // namespace detail

// Zero-padded 2-D convolution (cross-correlation), input [N,C,H,W], kernel
// [K,C,kh,kw], bias [K]. Output spatial size floor((H + 2p - kh)/stride) + 1.
template <typename S>
Tensor<S> conv2d(Tape<S>& tape, const Tensor<S>& input, const Tensor<S>& kernel,
                 const Tensor<S>& bias, int stride, int padding) {
    if (input.rank() != 4 || kernel.rank() != 4)
        throw DimensionError("conv2d: need 4-D input and kernel, got " + shape_str(input.shape()) +
                             " and " + shape_str(kernel.shape()));
    if (stride < 1) throw InputError("conv2d: stride must be positive");
    if (padding < 0) throw InputError("conv2d: padding must be non-negative");
    const long n = static_cast<long>(input.dim(0));
    const long c = static_cast<long>(input.dim(1));
    const long h = static_cast<long>(input.dim(2));
    const long w = static_cast<long>(input.dim(3));
    const long k = static_cast<long>(kernel.dim(0));
    const long kh = static_cast<long>(kernel.dim(2));
    const long kw = static_cast<long>(kernel.dim(3));
    if (static_cast<long>(kernel.dim(1)) != c)
        throw DimensionError("conv2d: kernel channels " + std::to_string(kernel.dim(1)) +
                             " do not match input channels " + std::to_string(c));
    if (bias.rank() != 1 || static_cast<long>(bias.dim(0)) != k)
        throw DimensionError("conv2d: bias shape " + shape_str(bias.shape()) + " does not match " +
                             std::to_string(k) + " kernels");
    if (kh > h + 2 * padding || kw > w + 2 * padding)
        throw DimensionError("conv2d: kernel " + shape_str(kernel.shape()) +
                             " larger than padded input " + shape_str(input.shape()));

    const long oh = (h + 2 * padding - kh) / stride + 1;
    const long ow = (w + 2 * padding - kw) / stride + 1;
    Tensor<S> out = Tensor<S>::zeros({static_cast<std::size_t>(n), static_cast<std::size_t>(k),
                                      static_cast<std::size_t>(oh), static_cast<std::size_t>(ow)});

    const S* x = input.data().data();
    const S* wgt = kernel.data().data();
    const S* b = bias.data().data();
    S* y = out.data().data();

    for (long in = 0; in < n; ++in) {
        for (long ik = 0; ik < k; ++ik) {
            S* yrow = y + ((in * k + ik) * oh) * ow;
            std::fill(yrow, yrow + oh * ow, b[ik]);
            for (long ic = 0; ic < c; ++ic) {
                const S* xch = x + ((in * c + ic) * h) * w;
                const S* wch = wgt + ((ik * c + ic) * kh) * kw;
                for (long ky = 0; ky < kh; ++ky) {
                    long lo_y, hi_y;
                    detail::conv_tap_range(ky, h, oh, stride, padding, lo_y, hi_y);
                    for (long kx = 0; kx < kw; ++kx) {
                        long lo_x, hi_x;
                        detail::conv_tap_range(kx, w, ow, stride, padding, lo_x, hi_x);
                        const S wv = wch[ky * kw + kx];
                        for (long o = lo_y; o <= hi_y; ++o) {
                            const S* xr = xch + (o * stride + ky - padding) * w + kx - padding;
                            S* yr = yrow + o * ow;
                            for (long q = lo_x; q <= hi_x; ++q) yr[q] += wv * xr[q * stride];
                        }
                    }
                }
            }
        }
    }

    auto xs = input.storage();
    auto ws = kernel.storage();
    auto bs = bias.storage();
    auto ys = out.storage();
    tape.record(OpKind::Conv2d, {input, kernel, bias}, out,
                [xs, ws, bs, ys, n, c, h, w, k, kh, kw, oh, ow, stride, padding] {
                    if (ys->grad.empty()) return;
                    const S* g = ys->grad.data();
                    const S* x = xs->data.data();
                    const S* wgt = ws->data.data();
                    const bool need_x = xs->requires_grad;
                    const bool need_w = ws->requires_grad;
                    const bool need_b = bs->requires_grad;
                    if (need_x) xs->ensure_grad();
                    if (need_w) ws->ensure_grad();
                    if (need_b) bs->ensure_grad();
                    S* gx = need_x ? xs->grad.data() : nullptr;
                    S* gw = need_w ? ws->grad.data() : nullptr;
                    S* gb = need_b ? bs->grad.data() : nullptr;

                    for (long in = 0; in < n; ++in) {
                        for (long ik = 0; ik < k; ++ik) {
                            const S* grow = g + ((in * k + ik) * oh) * ow;
                            if (need_b) {
                                S acc = 0;
                                for (long i = 0; i < oh * ow; ++i) acc += grow[i];
                                gb[ik] += acc;
                            }
                            if (!need_x && !need_w) continue;
                            for (long ic = 0; ic < c; ++ic) {
                                const S* xch = x + ((in * c + ic) * h) * w;
                                S* gxch = need_x ? gx + ((in * c + ic) * h) * w : nullptr;
                                const S* wch = wgt + ((ik * c + ic) * kh) * kw;
                                S* gwch = need_w ? gw + ((ik * c + ic) * kh) * kw : nullptr;
                                for (long ky = 0; ky < kh; ++ky) {
                                    long lo_y, hi_y;
                                    detail::conv_tap_range(ky, h, oh, stride, padding, lo_y, hi_y);
                                    for (long kx = 0; kx < kw; ++kx) {
                                        long lo_x, hi_x;
                                        detail::conv_tap_range(kx, w, ow, stride, padding, lo_x,
                                                               hi_x);
                                        const S wv = wch[ky * kw + kx];
                                        S acc = 0;
                                        for (long o = lo_y; o <= hi_y; ++o) {
                                            const long ibase =
                                                (o * stride + ky - padding) * w + kx - padding;
                                            const S* gr = grow + o * ow;
                                            for (long q = lo_x; q <= hi_x; ++q) {
                                                acc += gr[q] * xch[ibase + q * stride];
                                                if (need_x) gxch[ibase + q * stride] += wv * gr[q];
                                            }
                                        }
                                        if (need_w) gwch[ky * kw + kx] += acc;
                                    }
                                }
                            }
                        }
                    }
                });
    return out;
}

// Elementwise max(0, x). Derivative at exactly 0 is defined as 0.
template <typename S>
Tensor<S> relu(Tape<S>& tape, const Tensor<S>& x) {
    Tensor<S> y = Tensor<S>::zeros(x.shape());
    const auto& xd = x.data();
    auto& yd = y.data();
    for (std::size_t i = 0; i < xd.size(); ++i) yd[i] = xd[i] > S(0) ? xd[i] : S(0);

    auto xs = x.storage();
    auto ys = y.storage();
    tape.record(OpKind::Relu, {x}, y, [xs, ys] {
        if (ys->grad.empty() || !xs->requires_grad) return;
        xs->ensure_grad();
        for (std::size_t i = 0; i < xs->data.size(); ++i)
            if (xs->data[i] > S(0)) xs->grad[i] += ys->grad[i];
    });
    return y;
}

// Per-window maximum over [N,C,H,W]. Gradient routes to the first maximal
// element in row-major window order, which keeps backward deterministic.
template <typename S>
Tensor<S> maxpool2d(Tape<S>& tape, const Tensor<S>& x, int window, int stride) {
    if (x.rank() != 4)
        throw DimensionError("maxpool2d: need 4-D input, got " + shape_str(x.shape()));
    if (window < 1 || stride < 1) throw InputError("maxpool2d: window and stride must be positive");
    const long n = static_cast<long>(x.dim(0));
    const long c = static_cast<long>(x.dim(1));
    const long h = static_cast<long>(x.dim(2));
    const long w = static_cast<long>(x.dim(3));
    if (window > h || window > w)
        throw DimensionError("maxpool2d: window " + std::to_string(window) +
                             " larger than spatial dims of " + shape_str(x.shape()));
    const long oh = (h - window) / stride + 1;
    const long ow = (w - window) / stride + 1;

    Tensor<S> y = Tensor<S>::zeros({static_cast<std::size_t>(n), static_cast<std::size_t>(c),
                                    static_cast<std::size_t>(oh), static_cast<std::size_t>(ow)});
    std::vector<std::uint32_t> argmax(static_cast<std::size_t>(n * c * oh * ow));

    const S* xd = x.data().data();
    S* yd = y.data().data();
    std::size_t oi = 0;
    for (long plane = 0; plane < n * c; ++plane) {
        const S* xp = xd + plane * h * w;
        for (long py = 0; py < oh; ++py) {
            for (long px = 0; px < ow; ++px, ++oi) {
                long best = (py * stride) * w + px * stride;
                S bv = xp[best];
                for (long ky = 0; ky < window; ++ky) {
                    const long row = (py * stride + ky) * w + px * stride;
                    for (long kx = 0; kx < window; ++kx) {
                        if (xp[row + kx] > bv) {
                            bv = xp[row + kx];
                            best = row + kx;
                        }
                    }
                }
                yd[oi] = bv;
                argmax[oi] = static_cast<std::uint32_t>(plane * h * w + best);
            }
        }
    }

    auto xs = x.storage();
    auto ys = y.storage();
    tape.record(OpKind::MaxPool2d, {x}, y, [xs, ys, argmax = std::move(argmax)] {
        if (ys->grad.empty() || !xs->requires_grad) return;
        xs->ensure_grad();
        for (std::size_t i = 0; i < argmax.size(); ++i) xs->grad[argmax[i]] += ys->grad[i];
    });
    return y;
}

// input [N,D] * weight [D,M] + bias [M] broadcast over rows.
template <typename S>
Tensor<S> affine(Tape<S>& tape, const Tensor<S>& x, const Tensor<S>& weight,
                 const Tensor<S>& bias) {
    if (x.rank() != 2 || weight.rank() != 2)
        throw DimensionError("affine: need 2-D input and weight, got " + shape_str(x.shape()) +
                             " and " + shape_str(weight.shape()));
    const std::size_t n = x.dim(0), d = x.dim(1), m = weight.dim(1);
    if (weight.dim(0) != d)
        throw DimensionError("affine: input " + shape_str(x.shape()) + " incompatible with weight " +
                             shape_str(weight.shape()));
    if (bias.rank() != 1 || bias.dim(0) != m)
        throw DimensionError("affine: bias " + shape_str(bias.shape()) + " must have " +
                             std::to_string(m) + " entries");

    Tensor<S> y = Tensor<S>::zeros({n, m});
    const S* xd = x.data().data();
    const S* wd = weight.data().data();
    const S* bd = bias.data().data();
    S* yd = y.data().data();
    for (std::size_t i = 0; i < n; ++i) {
        S* yr = yd + i * m;
        for (std::size_t j = 0; j < m; ++j) yr[j] = bd[j];
        const S* xr = xd + i * d;
        for (std::size_t kk = 0; kk < d; ++kk) {
            const S xv = xr[kk];
            const S* wr = wd + kk * m;
            for (std::size_t j = 0; j < m; ++j) yr[j] += xv * wr[j];
        }
    }

    auto xs = x.storage();
    auto ws = weight.storage();
    auto bs = bias.storage();
    auto ys = y.storage();
    tape.record(OpKind::Affine, {x, weight, bias}, y, [xs, ws, bs, ys, n, d, m] {
        if (ys->grad.empty()) return;
        const S* g = ys->grad.data();
        if (bs->requires_grad) {
            bs->ensure_grad();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j) bs->grad[j] += g[i * m + j];
        }
        if (ws->requires_grad) {
            ws->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) {
                const S* xr = xs->data.data() + i * d;
                const S* gr = g + i * m;
                for (std::size_t kk = 0; kk < d; ++kk) {
                    S* wr = ws->grad.data() + kk * m;
                    const S xv = xr[kk];
                    for (std::size_t j = 0; j < m; ++j) wr[j] += xv * gr[j];
                }
            }
        }
        if (xs->requires_grad) {
            xs->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) {
                S* gx = xs->grad.data() + i * d;
                const S* gr = g + i * m;
                for (std::size_t kk = 0; kk < d; ++kk) {
                    const S* wr = ws->data.data() + kk * m;
                    S acc = 0;
                    for (std::size_t j = 0; j < m; ++j) acc += gr[j] * wr[j];
                    gx[kk] += acc;
                }
            }
        }
    });
    return y;
}

// Row-wise softmax with max subtraction; rows sum to 1 for all finite inputs.
template <typename S>
Tensor<S> softmax(Tape<S>& tape, const Tensor<S>& x) {
    if (x.rank() != 2 || x.dim(1) < 1)
        throw DimensionError("softmax: need [N,K] input with K >= 1, got " + shape_str(x.shape()));
    const std::size_t n = x.dim(0), k = x.dim(1);
    Tensor<S> y = Tensor<S>::zeros(x.shape());
    const S* xd = x.data().data();
    S* yd = y.data().data();
    for (std::size_t i = 0; i < n; ++i) {
        const S* xr = xd + i * k;
        S* yr = yd + i * k;
        S mx = xr[0];
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, xr[j]);
        S sum = 0;
        for (std::size_t j = 0; j < k; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            sum += yr[j];
        }
        for (std::size_t j = 0; j < k; ++j) yr[j] /= sum;
    }

    auto xs = x.storage();
    auto ys = y.storage();
    tape.record(OpKind::Softmax, {x}, y, [xs, ys, n, k] {
        if (ys->grad.empty() || !xs->requires_grad) return;
        xs->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
            const S* yr = ys->data.data() + i * k;
            const S* gr = ys->grad.data() + i * k;
            S dot = 0;
            for (std::size_t j = 0; j < k; ++j) dot += yr[j] * gr[j];
            S* gx = xs->grad.data() + i * k;
            for (std::size_t j = 0; j < k; ++j) gx[j] += yr[j] * (gr[j] - dot);
        }
    });
    return y;
}

// Mean over the batch of -log softmax(logits)[label], computed with a fused
// log-softmax. Optional per-class weights turn the mean into a weighted mean.
template <typename S>
Tensor<S> cross_entropy(Tape<S>& tape, const Tensor<S>& logits, const std::vector<int>& labels,
                        const std::vector<S>* class_weights = nullptr) {
    if (logits.rank() != 2)
        throw DimensionError("cross_entropy: need [N,K] logits, got " + shape_str(logits.shape()));
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    if (labels.size() != n)
        throw InputError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                         std::to_string(n));
    for (const int lb : labels)
        if (lb < 0 || static_cast<std::size_t>(lb) >= k)
            throw InputError("cross_entropy: label " + std::to_string(lb) + " outside [0," +
                             std::to_string(k) + ")");
    if (class_weights && class_weights->size() != k)
        throw InputError("cross_entropy: class weight count does not match class count");

    std::vector<S> probs(n * k);
    std::vector<S> sample_w(n, S(1));
    S weight_sum = 0;
    S loss = 0;
    const S* xd = logits.data().data();
    for (std::size_t i = 0; i < n; ++i) {
        const S* xr = xd + i * k;
        S mx = xr[0];
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, xr[j]);
        S sum = 0;
        for (std::size_t j = 0; j < k; ++j) sum += std::exp(xr[j] - mx);
        const S lse = mx + std::log(sum);
        for (std::size_t j = 0; j < k; ++j) probs[i * k + j] = std::exp(xr[j] - lse);
        if (class_weights) sample_w[i] = (*class_weights)[static_cast<std::size_t>(labels[i])];
        weight_sum += sample_w[i];
        loss += sample_w[i] * (lse - xr[static_cast<std::size_t>(labels[i])]);
    }
    loss /= weight_sum;

    Tensor<S> out = Tensor<S>::scalar(loss);
    auto xs = logits.storage();
    auto ys = out.storage();
    tape.record(OpKind::CrossEntropy, {logits}, out,
                [xs, ys, n, k, labels, probs = std::move(probs), sample_w = std::move(sample_w),
                 weight_sum] {
                    if (ys->grad.empty() || !xs->requires_grad) return;
                    xs->ensure_grad();
                    const S g = ys->grad[0];
                    for (std::size_t i = 0; i < n; ++i) {
                        const S wi = g * sample_w[i] / weight_sum;
                        S* gx = xs->grad.data() + i * k;
                        const S* pr = probs.data() + i * k;
                        for (std::size_t j = 0; j < k; ++j) gx[j] += wi * pr[j];
                        gx[static_cast<std::size_t>(labels[i])] -= wi;
                    }
                });
    return out;
}

// Row-wise concatenation of [N,Di] parts in the given order.
template <typename S>
Tensor<S> concat(Tape<S>& tape, const std::vector<Tensor<S>>& parts) {
    if (parts.empty()) throw InputError("concat: no parts");
    const std::size_t n = parts[0].dim(0);
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.rank() != 2)
            throw DimensionError("concat: need [N,D] parts, got " + shape_str(p.shape()));
        if (p.dim(0) != n)
            throw DimensionError("concat: leading dims differ, " + shape_str(parts[0].shape()) +
                                 " vs " + shape_str(p.shape()));
        total += p.dim(1);
    }

    Tensor<S> y = Tensor<S>::zeros({n, total});
    S* yd = y.data().data();
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t d = p.dim(1);
        const S* pd = p.data().data();
        for (std::size_t i = 0; i < n; ++i)
            std::copy(pd + i * d, pd + (i + 1) * d, yd + i * total + offset);
        offset += d;
    }

    std::vector<std::shared_ptr<TensorStorage<S>>> ins;
    ins.reserve(parts.size());
    for (const auto& p : parts) ins.push_back(p.storage());
    auto ys = y.storage();
    tape.record(OpKind::Concat, parts, y, [ins, ys, n, total] {
        if (ys->grad.empty()) return;
        std::size_t offset = 0;
        for (const auto& in : ins) {
            const std::size_t d = in->data.size() / n;
            if (in->requires_grad) {
                in->ensure_grad();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < d; ++j)
                        in->grad[i * d + j] += ys->grad[i * total + offset + j];
            }
            offset += d;
        }
    });
    return y;
}

// Columns [start, start+len) of a [N,D] tensor.
template <typename S>
Tensor<S> slice_cols(Tape<S>& tape, const Tensor<S>& x, std::size_t start, std::size_t len) {
    if (x.rank() != 2)
        throw DimensionError("slice_cols: need [N,D] input, got " + shape_str(x.shape()));
    const std::size_t n = x.dim(0), d = x.dim(1);
    if (start + len > d || len == 0)
        throw InputError("slice_cols: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") outside width " + std::to_string(d));
    Tensor<S> y = Tensor<S>::zeros({n, len});
    const S* xd = x.data().data();
    S* yd = y.data().data();
    for (std::size_t i = 0; i < n; ++i)
        std::copy(xd + i * d + start, xd + i * d + start + len, yd + i * len);

    auto xs = x.storage();
    auto ys = y.storage();
    tape.record(OpKind::SliceCols, {x}, y, [xs, ys, n, d, start, len] {
        if (ys->grad.empty() || !xs->requires_grad) return;
        xs->ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < len; ++j)
                xs->grad[i * d + start + j] += ys->grad[i * len + j];
    });
    return y;
}

template <typename S>
Tensor<S> add(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b) {
    detail::check_same_shape(a, b, "add");
    Tensor<S> y = Tensor<S>::zeros(a.shape());
    for (std::size_t i = 0; i < y.numel(); ++i) y.data()[i] = a.data()[i] + b.data()[i];

    auto as = a.storage();
    auto bs = b.storage();
    auto ys = y.storage();
    tape.record(OpKind::Add, {a, b}, y, [as, bs, ys] {
        if (ys->grad.empty()) return;
        for (auto* side : {&as, &bs}) {
            auto& st = **side;
            if (!st.requires_grad) continue;
            st.ensure_grad();
            for (std::size_t i = 0; i < st.grad.size(); ++i) st.grad[i] += ys->grad[i];
        }
    });
    return y;
}

// Elementwise product, shapes must match exactly.
template <typename S>
Tensor<S> mul(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b) {
    detail::check_same_shape(a, b, "mul");
    Tensor<S> y = Tensor<S>::zeros(a.shape());
    for (std::size_t i = 0; i < y.numel(); ++i) y.data()[i] = a.data()[i] * b.data()[i];

    auto as = a.storage();
    auto bs = b.storage();
    auto ys = y.storage();
    tape.record(OpKind::Mul, {a, b}, y, [as, bs, ys] {
        if (ys->grad.empty()) return;
        if (as->requires_grad) {
            as->ensure_grad();
            for (std::size_t i = 0; i < as->grad.size(); ++i)
                as->grad[i] += ys->grad[i] * bs->data[i];
        }
        if (bs->requires_grad) {
            bs->ensure_grad();
            for (std::size_t i = 0; i < bs->grad.size(); ++i)
                bs->grad[i] += ys->grad[i] * as->data[i];
        }
    });
    return y;
}

// Scale by a plain constant; no gradient flows to the constant.
template <typename S>
Tensor<S> scale(Tape<S>& tape, const Tensor<S>& x, S factor) {
    Tensor<S> y = Tensor<S>::zeros(x.shape());
    for (std::size_t i = 0; i < y.numel(); ++i) y.data()[i] = x.data()[i] * factor;

    auto xs = x.storage();
    auto ys = y.storage();
    tape.record(OpKind::Scale, {x}, y, [xs, ys, factor] {
        if (ys->grad.empty() || !xs->requires_grad) return;
        xs->ensure_grad();
        for (std::size_t i = 0; i < xs->grad.size(); ++i) xs->grad[i] += ys->grad[i] * factor;
    });
    return y;
}

// Scale by a tensor: either a 1-element scalar applied everywhere, or a
// per-row scalar ([N] or [N,1] against a [N,D] tensor). Gradient flows to
// both operands.
template <typename S>
Tensor<S> scale(Tape<S>& tape, const Tensor<S>& x, const Tensor<S>& s) {
    const bool scalar_case = s.numel() == 1;
    const bool row_case = !scalar_case && x.rank() == 2 &&
                          ((s.rank() == 1 && s.dim(0) == x.dim(0)) ||
                           (s.rank() == 2 && s.dim(0) == x.dim(0) && s.dim(1) == 1));
    if (!scalar_case && !row_case)
        throw DimensionError("scale: factor " + shape_str(s.shape()) +
                             " must be scalar or one value per row of " + shape_str(x.shape()));

    Tensor<S> y = Tensor<S>::zeros(x.shape());
    const std::size_t n = scalar_case ? 1 : x.dim(0);
    const std::size_t d = x.numel() / n;
    for (std::size_t i = 0; i < n; ++i) {
        const S sv = s.data()[scalar_case ? 0 : i];
        for (std::size_t j = 0; j < d; ++j) y.data()[i * d + j] = x.data()[i * d + j] * sv;
    }

    auto xs = x.storage();
    auto ss = s.storage();
    auto ys = y.storage();
    tape.record(OpKind::Scale, {x, s}, y, [xs, ss, ys, scalar_case, n, d] {
        if (ys->grad.empty()) return;
        if (xs->requires_grad) xs->ensure_grad();
        if (ss->requires_grad) ss->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
            const S sv = ss->data[scalar_case ? 0 : i];
            S acc = 0;
            for (std::size_t j = 0; j < d; ++j) {
                const S g = ys->grad[i * d + j];
                if (xs->requires_grad) xs->grad[i * d + j] += g * sv;
                acc += g * xs->data[i * d + j];
            }
            if (ss->requires_grad) ss->grad[scalar_case ? 0 : i] += acc;
        }
    });
    return y;
}

// Copying reshape; gradient reshapes back.
template <typename S>
Tensor<S> reshape(Tape<S>& tape, const Tensor<S>& x, Shape shape) {
    if (shape_numel(shape) != x.numel())
        throw DimensionError("reshape: " + shape_str(x.shape()) + " cannot become " +
                             shape_str(shape));
    Tensor<S> y = Tensor<S>::from_data(std::move(shape), x.data());

    auto xs = x.storage();
    auto ys = y.storage();
    tape.record(OpKind::Reshape, {x}, y, [xs, ys] {
        if (ys->grad.empty() || !xs->requires_grad) return;
        xs->ensure_grad();
        for (std::size_t i = 0; i < xs->grad.size(); ++i) xs->grad[i] += ys->grad[i];
    });
    return y;
}

// Sum of all elements, as a scalar tensor.
template <typename S>
Tensor<S> sum(Tape<S>& tape, const Tensor<S>& x) {
    S total = 0;
    for (const S v : x.data()) total += v;
    Tensor<S> y = Tensor<S>::scalar(total);

    auto xs = x.storage();
    auto ys = y.storage();
    tape.record(OpKind::Sum, {x}, y, [xs, ys] {
        if (ys->grad.empty() || !xs->requires_grad) return;
        xs->ensure_grad();
        for (std::size_t i = 0; i < xs->grad.size(); ++i) xs->grad[i] += ys->grad[0];
    });
    return y;
}

} // namespace osteo
