#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "munet/tensor.hpp"

namespace munet {

template <typename S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using RowMajorMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename S>
using ConstRowMajorMap =
    Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

namespace detail {

inline void check_4d(const Shape& s, const char* what) {
    if (s.size() != 4) throw std::invalid_argument(std::string(what) + ": expected 4-d tensor, got " + shape_str(s));
}

template <typename S>
void im2col(const S* x, int C, int H, int W, int kh, int kw, int stride, int pad,
            int Ho, int Wo, MatX<S>& col) {
    col.resize(static_cast<Eigen::Index>(C) * kh * kw, static_cast<Eigen::Index>(Ho) * Wo);
    for (int c = 0; c < C; ++c) {
        const S* xc = x + static_cast<std::int64_t>(c) * H * W;
        for (int di = 0; di < kh; ++di) {
            for (int dj = 0; dj < kw; ++dj) {
                const Eigen::Index row = (static_cast<Eigen::Index>(c) * kh + di) * kw + dj;
                for (int oi = 0; oi < Ho; ++oi) {
                    const int ii = oi * stride + di - pad;
                    for (int oj = 0; oj < Wo; ++oj) {
                        const int jj = oj * stride + dj - pad;
                        const bool in = (ii >= 0 && ii < H && jj >= 0 && jj < W);
                        col(row, static_cast<Eigen::Index>(oi) * Wo + oj) =
                            in ? xc[static_cast<std::int64_t>(ii) * W + jj] : S(0);
                    }
                }
            }
        }
    }
}

template <typename S>
void col2im_acc(const MatX<S>& col, int C, int H, int W, int kh, int kw, int stride, int pad,
                int Ho, int Wo, S* dx) {
    for (int c = 0; c < C; ++c) {
        S* xc = dx + static_cast<std::int64_t>(c) * H * W;
        for (int di = 0; di < kh; ++di) {
            for (int dj = 0; dj < kw; ++dj) {
                const Eigen::Index row = (static_cast<Eigen::Index>(c) * kh + di) * kw + dj;
                for (int oi = 0; oi < Ho; ++oi) {
                    const int ii = oi * stride + di - pad;
                    if (ii < 0 || ii >= H) continue;
                    for (int oj = 0; oj < Wo; ++oj) {
                        const int jj = oj * stride + dj - pad;
                        if (jj < 0 || jj >= W) continue;
                        xc[static_cast<std::int64_t>(ii) * W + jj] +=
                            col(row, static_cast<Eigen::Index>(oi) * Wo + oj);
                    }
                }
            }
        }
    }
}

}  // namespace detail

/// 2-d convolution, NCHW input, [F,C,kh,kw] weight.
template <typename S>
Tensor<S> conv2d(const Tensor<S>& input, const Tensor<S>& weight, const Tensor<S>& bias,
                 int stride = 1, int padding = 0) {
    detail::check_4d(input.shape(), "conv2d input");
    detail::check_4d(weight.shape(), "conv2d weight");
    const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int F = weight.dim(0), Cw = weight.dim(1), kh = weight.dim(2), kw = weight.dim(3);
    if (C != Cw)
        throw std::invalid_argument("conv2d: input channels " + std::to_string(C) +
                                    " != weight channels " + std::to_string(Cw));
    if (bias.size() != F)
        throw std::invalid_argument("conv2d: bias size " + std::to_string(bias.size()) +
                                    " != filter count " + std::to_string(F));
    const int Ho = (H + 2 * padding - kh) / stride + 1;
    const int Wo = (W + 2 * padding - kw) / stride + 1;
    if (Ho <= 0 || Wo <= 0)
        throw std::invalid_argument("conv2d: kernel does not fit input " + shape_str(input.shape()));

    const Eigen::Index K = static_cast<Eigen::Index>(C) * kh * kw;
    const Eigen::Index L = static_cast<Eigen::Index>(Ho) * Wo;
    ArrayX<S> out(static_cast<Eigen::Index>(N) * F * L);
    ConstRowMajorMap<S> Wmat(weight.data(), F, K);
    MatX<S> col;
    for (int n = 0; n < N; ++n) {
        detail::im2col(input.data() + static_cast<std::int64_t>(n) * C * H * W, C, H, W, kh, kw,
                       stride, padding, Ho, Wo, col);
        RowMajorMap<S> outm(out.data() + static_cast<std::int64_t>(n) * F * L, F, L);
        outm.noalias() = Wmat * col;
        for (int f = 0; f < F; ++f) outm.row(f).array() += bias[f];
    }

    Tensor<S> in = input, w = weight, b = bias;
    auto result =
        Tensor<S>::make_op(Shape{N, F, Ho, Wo}, std::move(out), {input, weight, bias}, nullptr);
    auto rnode = result.node();
    if (rnode->requires_grad) {
        TensorNode<S>* rn = rnode.get();
        rnode->backward_fn = [in, w, b, rn, N, C, H, W, F, kh, kw, stride, padding, Ho,
                              Wo]() mutable {
            const Eigen::Index K = static_cast<Eigen::Index>(C) * kh * kw;
            const Eigen::Index L = static_cast<Eigen::Index>(Ho) * Wo;
            in.node()->ensure_grad();
            w.node()->ensure_grad();
            b.node()->ensure_grad();
            RowMajorMap<S> dW(w.node()->grad.data(), F, K);
            MatX<S> col, dcol;
            for (int n = 0; n < N; ++n) {
                detail::im2col(in.data() + static_cast<std::int64_t>(n) * C * H * W, C, H, W, kh,
                               kw, stride, padding, Ho, Wo, col);
                ConstRowMajorMap<S> dOut(rn->grad.data() + static_cast<std::int64_t>(n) * F * L,
                                         F, L);
                dW.noalias() += dOut * col.transpose();
                for (int f = 0; f < F; ++f) b.node()->grad[f] += dOut.row(f).sum();
                dcol.noalias() = ConstRowMajorMap<S>(w.data(), F, K).transpose() * dOut;
                detail::col2im_acc(dcol, C, H, W, kh, kw, stride, padding, Ho, Wo,
                                   in.node()->grad.data() + static_cast<std::int64_t>(n) * C * H * W);
            }
        };
    }
    return result;
}

/// Transposed 2-d convolution with kernel == stride (checkerboard-free
/// upsampling as in the architecture table). Weight is [Cin,Cout,k,k].
template <typename S>
Tensor<S> transposed_conv2d(const Tensor<S>& input, const Tensor<S>& weight, int stride = 2,
                            int kernel = 2) {
    detail::check_4d(input.shape(), "transposed_conv2d input");
    detail::check_4d(weight.shape(), "transposed_conv2d weight");
    if (kernel != stride)
        throw std::invalid_argument("transposed_conv2d: only kernel == stride supported");
    const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    if (weight.dim(0) != C)
        throw std::invalid_argument("transposed_conv2d: input channels " + std::to_string(C) +
                                    " != weight in-channels " + std::to_string(weight.dim(0)));
    if (weight.dim(2) != kernel || weight.dim(3) != kernel)
        throw std::invalid_argument("transposed_conv2d: weight kernel dims mismatch");
    const int Co = weight.dim(1);
    const int k = kernel;
    const int Ho = H * stride, Wo = W * stride;
    const Eigen::Index L = static_cast<Eigen::Index>(H) * W;
    const Eigen::Index Ck = static_cast<Eigen::Index>(Co) * k * k;

    ArrayX<S> out(static_cast<Eigen::Index>(N) * Co * Ho * Wo);
    ConstRowMajorMap<S> Wmat(weight.data(), C, Ck);
    MatX<S> cols;
    for (int n = 0; n < N; ++n) {
        ConstRowMajorMap<S> Xmat(input.data() + static_cast<std::int64_t>(n) * C * L, C, L);
        cols.noalias() = Wmat.transpose() * Xmat;  // (Co*k*k) x L
        S* o = out.data() + static_cast<std::int64_t>(n) * Co * Ho * Wo;
        for (int co = 0; co < Co; ++co)
            for (int di = 0; di < k; ++di)
                for (int dj = 0; dj < k; ++dj) {
                    const Eigen::Index row = (static_cast<Eigen::Index>(co) * k + di) * k + dj;
                    for (int i = 0; i < H; ++i)
                        for (int j = 0; j < W; ++j)
                            o[(static_cast<std::int64_t>(co) * Ho + (i * stride + di)) * Wo +
                              (j * stride + dj)] = cols(row, static_cast<Eigen::Index>(i) * W + j);
                }
    }

    Tensor<S> in = input, w = weight;
    auto result =
        Tensor<S>::make_op(Shape{N, Co, Ho, Wo}, std::move(out), {input, weight}, nullptr);
    auto rnode = result.node();
    if (rnode->requires_grad) {
        TensorNode<S>* rn = rnode.get();
        rnode->backward_fn = [in, w, rn, N, C, H, W, Co, k, stride]() mutable {
            const int Ho = H * stride, Wo = W * stride;
            const Eigen::Index L = static_cast<Eigen::Index>(H) * W;
            const Eigen::Index Ck = static_cast<Eigen::Index>(Co) * k * k;
            in.node()->ensure_grad();
            w.node()->ensure_grad();
            RowMajorMap<S> dW(w.node()->grad.data(), C, Ck);
            MatX<S> dcols(Ck, L);
            for (int n = 0; n < N; ++n) {
                const S* go = rn->grad.data() + static_cast<std::int64_t>(n) * Co * Ho * Wo;
                for (int co = 0; co < Co; ++co)
                    for (int di = 0; di < k; ++di)
                        for (int dj = 0; dj < k; ++dj) {
                            const Eigen::Index row = (static_cast<Eigen::Index>(co) * k + di) * k + dj;
                            for (int i = 0; i < H; ++i)
                                for (int j = 0; j < W; ++j)
                                    dcols(row, static_cast<Eigen::Index>(i) * W + j) =
                                        go[(static_cast<std::int64_t>(co) * Ho + (i * stride + di)) *
                                               Wo +
                                           (j * stride + dj)];
                        }
                ConstRowMajorMap<S> Xmat(in.data() + static_cast<std::int64_t>(n) * C * L, C, L);
                dW.noalias() += Xmat * dcols.transpose();
                RowMajorMap<S> dX(in.node()->grad.data() + static_cast<std::int64_t>(n) * C * L, C,
                                  L);
                dX.noalias() += ConstRowMajorMap<S>(w.data(), C, Ck) * dcols;
            }
        };
    }
    return result;
}

/// 2x2/2 max pooling; gradient routed to the first maximal element in
/// row-major window order.
template <typename S>
Tensor<S> maxpool2d(const Tensor<S>& input, int kernel = 2, int stride = 2) {
    detail::check_4d(input.shape(), "maxpool2d input");
    if (kernel != 2 || stride != 2)
        throw std::invalid_argument("maxpool2d: only kernel=2 stride=2 supported");
    const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    if (H % 2 != 0 || W % 2 != 0)
        throw std::invalid_argument("maxpool2d: spatial dims must be even, got " +
                                    shape_str(input.shape()));
    const int Ho = H / 2, Wo = W / 2;
    const std::int64_t outn = static_cast<std::int64_t>(N) * C * Ho * Wo;
    ArrayX<S> out(outn);
    auto argmax = std::make_shared<std::vector<std::int64_t>>(outn);
    std::int64_t oi = 0;
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const std::int64_t base = (static_cast<std::int64_t>(n) * C + c) * H * W;
            for (int i = 0; i < Ho; ++i)
                for (int j = 0; j < Wo; ++j, ++oi) {
                    std::int64_t best = base + static_cast<std::int64_t>(2 * i) * W + 2 * j;
                    S bv = input[best];
                    for (int di = 0; di < 2; ++di)
                        for (int dj = 0; dj < 2; ++dj) {
                            const std::int64_t idx =
                                base + static_cast<std::int64_t>(2 * i + di) * W + (2 * j + dj);
                            if (input[idx] > bv) {
                                bv = input[idx];
                                best = idx;
                            }
                        }
                    out[oi] = bv;
                    (*argmax)[oi] = best;
                }
        }

    Tensor<S> in = input;
    auto result = Tensor<S>::make_op(Shape{N, C, Ho, Wo}, std::move(out), {input}, nullptr);
    auto rnode = result.node();
    if (rnode->requires_grad) {
        TensorNode<S>* rn = rnode.get();
        rnode->backward_fn = [in, rn, argmax]() mutable {
            in.node()->ensure_grad();
            for (std::int64_t i = 0; i < static_cast<std::int64_t>(argmax->size()); ++i)
                in.node()->grad[(*argmax)[i]] += rn->grad[i];
        };
    }
    return result;
}

template <typename S>
Tensor<S> relu(const Tensor<S>& input) {
    ArrayX<S> out = input.array().max(S(0));
    Tensor<S> in = input;
    auto result = Tensor<S>::make_op(input.shape(), std::move(out), {input}, nullptr);
    auto rnode = result.node();
    if (rnode->requires_grad) {
        TensorNode<S>* rn = rnode.get();
        rnode->backward_fn = [in, rn]() mutable {
            in.node()->ensure_grad();
            in.node()->grad += (in.array() > S(0)).template cast<S>() * rn->grad;
        };
    }
    return result;
}

/// Concatenate along an axis (shapes must agree elsewhere).
template <typename S>
Tensor<S> concat(const Tensor<S>& a, const Tensor<S>& b, int axis) {
    if (a.ndim() != b.ndim()) throw std::invalid_argument("concat: rank mismatch");
    if (axis < 0 || axis >= a.ndim()) throw std::invalid_argument("concat: bad axis");
    for (int i = 0; i < a.ndim(); ++i)
        if (i != axis && a.dim(i) != b.dim(i))
            throw std::invalid_argument("concat: shape mismatch at axis " + std::to_string(i) +
                                        ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= a.dim(i);
    for (int i = axis + 1; i < a.ndim(); ++i) inner *= a.dim(i);
    const std::int64_t ablk = static_cast<std::int64_t>(a.dim(axis)) * inner;
    const std::int64_t bblk = static_cast<std::int64_t>(b.dim(axis)) * inner;
    Shape oshape = a.shape();
    oshape[static_cast<size_t>(axis)] = a.dim(axis) + b.dim(axis);
    ArrayX<S> out(outer * (ablk + bblk));
    for (std::int64_t o = 0; o < outer; ++o) {
        out.segment(o * (ablk + bblk), ablk) = a.array().segment(o * ablk, ablk);
        out.segment(o * (ablk + bblk) + ablk, bblk) = b.array().segment(o * bblk, bblk);
    }
    Tensor<S> ta = a, tb = b;
    auto result = Tensor<S>::make_op(std::move(oshape), std::move(out), {a, b}, nullptr);
    auto rnode = result.node();
    if (rnode->requires_grad) {
        TensorNode<S>* rn = rnode.get();
        rnode->backward_fn = [ta, tb, rn, outer, ablk, bblk]() mutable {
            ta.node()->ensure_grad();
            tb.node()->ensure_grad();
            for (std::int64_t o = 0; o < outer; ++o) {
                ta.node()->grad.segment(o * ablk, ablk) +=
                    rn->grad.segment(o * (ablk + bblk), ablk);
                tb.node()->grad.segment(o * bblk, bblk) +=
                    rn->grad.segment(o * (ablk + bblk) + ablk, bblk);
            }
        };
    }
    return result;
}

enum class BNMode { train, eval };

/// Batch normalization over (N,H,W) per channel. Running stats are plain
/// buffers updated in place during train mode (EMA with the given momentum).
template <typename S>
Tensor<S> batchnorm2d(const Tensor<S>& input, const Tensor<S>& gamma, const Tensor<S>& beta,
                      Tensor<S>& running_mean, Tensor<S>& running_var, BNMode mode,
                      S momentum = S(0.1), S eps = S(1e-5)) {
    detail::check_4d(input.shape(), "batchnorm2d input");
    const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    if (gamma.size() != C || beta.size() != C || running_mean.size() != C ||
        running_var.size() != C)
        throw std::invalid_argument("batchnorm2d: per-channel parameter size != " +
                                    std::to_string(C));
    const std::int64_t plane = static_cast<std::int64_t>(H) * W;
    const std::int64_t m = static_cast<std::int64_t>(N) * plane;

    auto mean = std::make_shared<ArrayX<S>>(C);
    auto istd = std::make_shared<ArrayX<S>>(C);
    if (mode == BNMode::train) {
        for (int c = 0; c < C; ++c) {
            S mu = 0;
            for (int n = 0; n < N; ++n)
                mu += input.array()
                          .segment((static_cast<std::int64_t>(n) * C + c) * plane, plane)
                          .sum();
            mu /= static_cast<S>(m);
            S var = 0;
            for (int n = 0; n < N; ++n)
                var += (input.array().segment((static_cast<std::int64_t>(n) * C + c) * plane,
                                              plane) -
                        mu)
                           .square()
                           .sum();
            var /= static_cast<S>(m);
            (*mean)[c] = mu;
            (*istd)[c] = S(1) / std::sqrt(var + eps);
            running_mean[c] = (S(1) - momentum) * running_mean[c] + momentum * mu;
            running_var[c] = (S(1) - momentum) * running_var[c] + momentum * var;
        }
    } else {
        for (int c = 0; c < C; ++c) {
            (*mean)[c] = running_mean[c];
            (*istd)[c] = S(1) / std::sqrt(running_var[c] + eps);
        }
    }

    ArrayX<S> out(input.size());
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const std::int64_t off = (static_cast<std::int64_t>(n) * C + c) * plane;
            out.segment(off, plane) =
                (input.array().segment(off, plane) - (*mean)[c]) * (*istd)[c] * gamma[c] + beta[c];
        }

    Tensor<S> in = input, g = gamma, bt = beta;
    auto result =
        Tensor<S>::make_op(input.shape(), std::move(out), {input, gamma, beta}, nullptr);
    auto rnode = result.node();
    if (rnode->requires_grad) {
        TensorNode<S>* rn = rnode.get();
        const bool train = (mode == BNMode::train);
        rnode->backward_fn = [in, g, bt, rn, mean, istd, N, C, plane, m, train]() mutable {
            in.node()->ensure_grad();
            g.node()->ensure_grad();
            bt.node()->ensure_grad();
            for (int c = 0; c < C; ++c) {
                S sum_dy = 0, sum_dy_xhat = 0;
                for (int n = 0; n < N; ++n) {
                    const std::int64_t off = (static_cast<std::int64_t>(n) * C + c) * plane;
                    auto dy = rn->grad.segment(off, plane);
                    auto xhat = (in.array().segment(off, plane) - (*mean)[c]) * (*istd)[c];
                    sum_dy += dy.sum();
                    sum_dy_xhat += (dy * xhat).sum();
                }
                bt.node()->grad[c] += sum_dy;
                g.node()->grad[c] += sum_dy_xhat;
                const S gi = g[c] * (*istd)[c];
                for (int n = 0; n < N; ++n) {
                    const std::int64_t off = (static_cast<std::int64_t>(n) * C + c) * plane;
                    auto dy = rn->grad.segment(off, plane);
                    auto xhat = (in.array().segment(off, plane) - (*mean)[c]) * (*istd)[c];
                    if (train) {
                        in.node()->grad.segment(off, plane) +=
                            gi * (dy - sum_dy / static_cast<S>(m) -
                                  xhat * (sum_dy_xhat / static_cast<S>(m)));
                    } else {
                        in.node()->grad.segment(off, plane) += gi * dy;
                    }
                }
            }
        };
    }
    return result;
}

/// Mean voxel-wise two-class cross-entropy. Labels are {0,1} per voxel,
/// row-major [N,H,W]; logits are [N,2,H,W].
template <typename S>
Tensor<S> softmax_cross_entropy(const Tensor<S>& logits, const std::vector<std::uint8_t>& labels) {
    detail::check_4d(logits.shape(), "softmax_cross_entropy logits");
    const int N = logits.dim(0), C = logits.dim(1), H = logits.dim(2), W = logits.dim(3);
    if (C != 2) throw std::invalid_argument("softmax_cross_entropy: logits must have 2 channels");
    const std::int64_t plane = static_cast<std::int64_t>(H) * W;
    const std::int64_t count = static_cast<std::int64_t>(N) * plane;
    if (static_cast<std::int64_t>(labels.size()) != count)
        throw std::invalid_argument("softmax_cross_entropy: label count mismatch");
    for (auto v : labels)
        if (v > 1) throw std::invalid_argument("softmax_cross_entropy: label outside {0,1}");

    S loss = 0;
    for (int n = 0; n < N; ++n)
        for (std::int64_t p = 0; p < plane; ++p) {
            const S z0 = logits[(static_cast<std::int64_t>(n) * 2 + 0) * plane + p];
            const S z1 = logits[(static_cast<std::int64_t>(n) * 2 + 1) * plane + p];
            const S zm = std::max(z0, z1);
            const S lse = zm + std::log(std::exp(z0 - zm) + std::exp(z1 - zm));
            const S zt = labels[static_cast<size_t>(n * plane + p)] ? z1 : z0;
            loss += lse - zt;
        }
    loss /= static_cast<S>(count);

    Tensor<S> lg = logits;
    ArrayX<S> out(1);
    out[0] = loss;
    auto labs = std::make_shared<std::vector<std::uint8_t>>(labels);
    auto result = Tensor<S>::make_op(Shape{1}, std::move(out), {logits}, nullptr);
    auto rnode = result.node();
    if (rnode->requires_grad) {
        TensorNode<S>* rn = rnode.get();
        rnode->backward_fn = [lg, rn, labs, N, plane, count]() mutable {
            lg.node()->ensure_grad();
            const S up = rn->grad[0] / static_cast<S>(count);
            for (int n = 0; n < N; ++n)
                for (std::int64_t p = 0; p < plane; ++p) {
                    const std::int64_t i0 = (static_cast<std::int64_t>(n) * 2 + 0) * plane + p;
                    const std::int64_t i1 = i0 + plane;
                    const S z0 = lg[i0], z1 = lg[i1];
                    const S zm = std::max(z0, z1);
                    const S e0 = std::exp(z0 - zm), e1 = std::exp(z1 - zm);
                    const S p1 = e1 / (e0 + e1);
                    const bool t1 = (*labs)[static_cast<size_t>(n * plane + p)] != 0;
                    lg.node()->grad[i0] += up * ((S(1) - p1) - (t1 ? S(0) : S(1)));
                    lg.node()->grad[i1] += up * (p1 - (t1 ? S(1) : S(0)));
                }
        };
    }
    return result;
}

/// Foreground softmax probability, detached from the graph.
template <typename S>
std::vector<double> softmax_prob_fg(const Tensor<S>& logits) {
    const int N = logits.dim(0), H = logits.dim(2), W = logits.dim(3);
    const std::int64_t plane = static_cast<std::int64_t>(H) * W;
    std::vector<double> prob(static_cast<size_t>(N) * plane);
    for (int n = 0; n < N; ++n)
        for (std::int64_t p = 0; p < plane; ++p) {
            const double z0 = logits[(static_cast<std::int64_t>(n) * 2 + 0) * plane + p];
            const double z1 = logits[(static_cast<std::int64_t>(n) * 2 + 1) * plane + p];
            const double zm = std::max(z0, z1);
            const double e0 = std::exp(z0 - zm), e1 = std::exp(z1 - zm);
            prob[static_cast<size_t>(n * plane + p)] = e1 / (e0 + e1);
        }
    return prob;
}

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.shape() != b.shape()) throw std::invalid_argument("add: shape mismatch");
    ArrayX<S> out = a.array() + b.array();
    Tensor<S> ta = a, tb = b;
    auto result = Tensor<S>::make_op(a.shape(), std::move(out), {a, b}, nullptr);
    auto rnode = result.node();
    if (rnode->requires_grad) {
        TensorNode<S>* rn = rnode.get();
        rnode->backward_fn = [ta, tb, rn]() mutable {
            ta.node()->ensure_grad();
            tb.node()->ensure_grad();
            ta.node()->grad += rn->grad;
            tb.node()->grad += rn->grad;
        };
    }
    return result;
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S factor) {
    ArrayX<S> out = a.array() * factor;
    Tensor<S> ta = a;
    auto result = Tensor<S>::make_op(a.shape(), std::move(out), {a}, nullptr);
    auto rnode = result.node();
    if (rnode->requires_grad) {
        TensorNode<S>* rn = rnode.get();
        rnode->backward_fn = [ta, rn, factor]() mutable {
            ta.node()->ensure_grad();
            ta.node()->grad += factor * rn->grad;
        };
    }
    return result;
}

}  // namespace munet
