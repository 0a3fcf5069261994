#include "adhdnet/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "adhdnet/diagnostics.hpp"

namespace adhdnet {
namespace {

template <typename S>
using NodePtr = std::shared_ptr<detail::Node<S>>;
template <typename S>
using MatR = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MapR = Eigen::Map<MatR<S>>;
template <typename S>
using CMapR = Eigen::Map<const MatR<S>>;

using Index = std::ptrdiff_t;

template <typename S, typename Backward>
BasicTensor<S> record(const char* op, Shape shape, std::vector<S> data, std::vector<NodePtr<S>> inputs,
                      Backward&& fn) {
    auto node = std::make_shared<detail::Node<S>>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->op = op;
    const bool needs_grad = GradMode::enabled() &&
                            std::any_of(inputs.begin(), inputs.end(), [](const NodePtr<S>& p) {
                                return p && p->requires_grad;
                            });
    if (needs_grad) {
        node->requires_grad = true;
        node->inputs = std::move(inputs);
        node->backward = std::forward<Backward>(fn);
    }
    return BasicTensor<S>::from_node(std::move(node));
}

template <typename S>
void require_rank(const BasicTensor<S>& t, std::size_t rank, const char* op, const char* what) {
    if (!t.defined()) throw ArgumentError(std::string(op) + ": " + what + " is undefined");
    if (t.rank() != rank) {
        throw DimensionError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                             ", got " + shape_str(t.shape()));
    }
}

struct ConvGeometry {
    Index n, c, h, w;    // input
    Index kh, kw;        // kernel extent
    Index ho, wo;        // output
    Index pad_top, pad_left;
};

ConvGeometry conv_geometry(const Shape& in, std::size_t kh, std::size_t kw, Padding padding, const char* op,
                           const Shape& kernel_shape) {
    ConvGeometry g{};
    g.n = static_cast<Index>(in[0]);
    g.c = static_cast<Index>(in[1]);
    g.h = static_cast<Index>(in[2]);
    g.w = static_cast<Index>(in[3]);
    g.kh = static_cast<Index>(kh);
    g.kw = static_cast<Index>(kw);
    if (g.kh == 0 || g.kw == 0) throw DimensionError(std::string(op) + ": empty kernel " + shape_str(kernel_shape));
    if (padding == Padding::Same) {
        g.ho = g.h;
        g.wo = g.w;
        g.pad_top = (g.kh - 1) / 2;
        g.pad_left = (g.kw - 1) / 2;
    } else {
        if (g.kh > g.h || g.kw > g.w) {
            throw DimensionError(std::string(op) + ": kernel " + shape_str(kernel_shape) +
                                 " larger than unpadded input " + shape_str(in));
        }
        g.ho = g.h - g.kh + 1;
        g.wo = g.w - g.kw + 1;
        g.pad_top = 0;
        g.pad_left = 0;
    }
    return g;
}

// Valid output-column range [lo, hi) for kernel column j.
inline std::pair<Index, Index> column_range(const ConvGeometry& g, Index j) {
    const Index lo = std::max<Index>(0, g.pad_left - j);
    const Index hi = std::min<Index>(g.wo, g.w + g.pad_left - j);
    return {lo, std::max(lo, hi)};
}

// One sample: x[C,H,W] -> cols[C*kh*kw, Ho*Wo].
template <typename S>
void im2col(const S* x, const ConvGeometry& g, S* cols) {
    const Index plane = g.ho * g.wo;
    for (Index c = 0; c < g.c; ++c) {
        for (Index i = 0; i < g.kh; ++i) {
            for (Index j = 0; j < g.kw; ++j) {
                S* row = cols + ((c * g.kh + i) * g.kw + j) * plane;
                const auto [lo, hi] = column_range(g, j);
                for (Index oh = 0; oh < g.ho; ++oh) {
                    S* dst = row + oh * g.wo;
                    const Index ih = oh + i - g.pad_top;
                    if (ih < 0 || ih >= g.h) {
                        std::fill(dst, dst + g.wo, S(0));
                        continue;
                    }
                    const S* src = x + (c * g.h + ih) * g.w + (j - g.pad_left);
                    std::fill(dst, dst + lo, S(0));
                    std::copy(src + lo, src + hi, dst + lo);
                    std::fill(dst + hi, dst + g.wo, S(0));
                }
            }
        }
    }
}

template <typename S>
void col2im_add(const S* cols, const ConvGeometry& g, S* dx) {
    const Index plane = g.ho * g.wo;
    for (Index c = 0; c < g.c; ++c) {
        for (Index i = 0; i < g.kh; ++i) {
            for (Index j = 0; j < g.kw; ++j) {
                const S* row = cols + ((c * g.kh + i) * g.kw + j) * plane;
                const auto [lo, hi] = column_range(g, j);
                for (Index oh = 0; oh < g.ho; ++oh) {
                    const Index ih = oh + i - g.pad_top;
                    if (ih < 0 || ih >= g.h) continue;
                    const S* src = row + oh * g.wo;
                    S* dst = dx + (c * g.h + ih) * g.w + (j - g.pad_left);
                    for (Index ow = lo; ow < hi; ++ow) dst[ow] += src[ow];
                }
            }
        }
    }
}

}  // namespace

template <typename S>
BasicTensor<S> matmul(const BasicTensor<S>& a, const BasicTensor<S>& b) {
    if (!a.defined() || !b.defined() || a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: cannot multiply " + (a.defined() ? shape_str(a.shape()) : "undefined") +
                             " by " + (b.defined() ? shape_str(b.shape()) : "undefined"));
    }
    const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<S> out(static_cast<std::size_t>(m * n));
    MapR<S>(out.data(), m, n).noalias() = CMapR<S>(a.data().data(), m, k) * CMapR<S>(b.data().data(), k, n);
    return record<S>("matmul", {std::size_t(m), std::size_t(n)}, std::move(out), {a.node(), b.node()},
                     [m, k, n](detail::Node<S>& self) {
                         auto& A = *self.inputs[0];
                         auto& B = *self.inputs[1];
                         CMapR<S> dy(self.grad.data(), m, n);
                         if (A.requires_grad) {
                             MapR<S>(A.grad_buffer().data(), m, k).noalias() +=
                                 dy * CMapR<S>(B.data.data(), k, n).transpose();
                         }
                         if (B.requires_grad) {
                             MapR<S>(B.grad_buffer().data(), k, n).noalias() +=
                                 CMapR<S>(A.data.data(), m, k).transpose() * dy;
                         }
                     });
}

template <typename S>
BasicTensor<S> linear(const BasicTensor<S>& x, const BasicTensor<S>& weight, const BasicTensor<S>& bias) {
    require_rank(x, 2, "linear", "input");
    require_rank(weight, 2, "linear", "weight");
    if (x.dim(1) != weight.dim(1)) {
        throw DimensionError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                             shape_str(weight.shape()));
    }
    const bool has_bias = bias.defined();
    if (has_bias && (bias.rank() != 1 || bias.dim(0) != weight.dim(0))) {
        throw DimensionError("linear: bias " + shape_str(bias.shape()) + " does not match weight " +
                             shape_str(weight.shape()));
    }
    const Index n = x.dim(0), in = x.dim(1), out_dim = weight.dim(0);
    std::vector<S> out(static_cast<std::size_t>(n * out_dim));
    MapR<S> y(out.data(), n, out_dim);
    y.noalias() = CMapR<S>(x.data().data(), n, in) * CMapR<S>(weight.data().data(), out_dim, in).transpose();
    if (has_bias) {
        for (Index r = 0; r < n; ++r)
            for (Index c = 0; c < out_dim; ++c) y(r, c) += bias.data()[c];
    }
    std::vector<NodePtr<S>> inputs{x.node(), weight.node()};
    if (has_bias) inputs.push_back(bias.node());
    return record<S>("linear", {std::size_t(n), std::size_t(out_dim)}, std::move(out), std::move(inputs),
                     [n, in, out_dim, has_bias](detail::Node<S>& self) {
                         auto& X = *self.inputs[0];
                         auto& Wt = *self.inputs[1];
                         CMapR<S> dy(self.grad.data(), n, out_dim);
                         if (X.requires_grad) {
                             MapR<S>(X.grad_buffer().data(), n, in).noalias() +=
                                 dy * CMapR<S>(Wt.data.data(), out_dim, in);
                         }
                         if (Wt.requires_grad) {
                             MapR<S>(Wt.grad_buffer().data(), out_dim, in).noalias() +=
                                 dy.transpose() * CMapR<S>(X.data.data(), n, in);
                         }
                         if (has_bias && self.inputs[2]->requires_grad) {
                             auto& gb = self.inputs[2]->grad_buffer();
                             for (Index c = 0; c < out_dim; ++c) {
                                 double acc = 0;
                                 for (Index r = 0; r < n; ++r) acc += dy(r, c);
                                 gb[c] += static_cast<S>(acc);
                             }
                         }
                     });
}

template <typename S>
BasicTensor<S> add(const BasicTensor<S>& a, const BasicTensor<S>& b) {
    if (a.shape() != b.shape())
        throw DimensionError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<S> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    return record<S>("add", a.shape(), std::move(out), {a.node(), b.node()}, [](detail::Node<S>& self) {
        for (auto& in : self.inputs) {
            if (!in->requires_grad) continue;
            auto& g = in->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

template <typename S>
BasicTensor<S> mul(const BasicTensor<S>& a, const BasicTensor<S>& b) {
    if (a.shape() != b.shape())
        throw DimensionError("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<S> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    return record<S>("mul", a.shape(), std::move(out), {a.node(), b.node()}, [](detail::Node<S>& self) {
        auto& A = *self.inputs[0];
        auto& B = *self.inputs[1];
        if (A.requires_grad) {
            auto& g = A.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * B.data[i];
        }
        if (B.requires_grad) {
            auto& g = B.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * A.data[i];
        }
    });
}

template <typename S>
BasicTensor<S> scale(const BasicTensor<S>& a, S factor) {
    std::vector<S> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * factor;
    return record<S>("scale", a.shape(), std::move(out), {a.node()}, [factor](detail::Node<S>& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
    });
}

template <typename S>
BasicTensor<S> sum(const BasicTensor<S>& a) {
    double acc = 0;
    for (S v : a.data()) acc += v;
    return record<S>("sum", Shape{}, {static_cast<S>(acc)}, {a.node()}, [](detail::Node<S>& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (auto& v : g) v += self.grad[0];
    });
}

template <typename S>
BasicTensor<S> reshape(const BasicTensor<S>& a, Shape shape) {
    if (shape_numel(shape) != a.numel())
        throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    std::vector<S> out(a.data().begin(), a.data().end());
    return record<S>("reshape", std::move(shape), std::move(out), {a.node()}, [](detail::Node<S>& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

template <typename S>
BasicTensor<S> conv2d(const BasicTensor<S>& input, const BasicTensor<S>& kernel, Padding padding) {
    require_rank(input, 4, "conv2d", "input");
    require_rank(kernel, 4, "conv2d", "kernel");
    if (kernel.dim(1) != input.dim(1)) {
        throw DimensionError("conv2d: kernel " + shape_str(kernel.shape()) + " expects " +
                             std::to_string(kernel.dim(1)) + " input channels, input is " + shape_str(input.shape()));
    }
    const ConvGeometry g = conv_geometry(input.shape(), kernel.dim(2), kernel.dim(3), padding, "conv2d", kernel.shape());
    const Index filters = kernel.dim(0);
    const Index patch = g.c * g.kh * g.kw;
    const Index plane_out = g.ho * g.wo;
    const Index plane_in = g.c * g.h * g.w;
    const bool pointwise = g.kh == 1 && g.kw == 1;

    std::vector<S> out(static_cast<std::size_t>(g.n * filters * plane_out));
    std::vector<S> cols(pointwise ? 0 : static_cast<std::size_t>(patch * plane_out));
    CMapR<S> k(kernel.data().data(), filters, patch);
    for (Index n = 0; n < g.n; ++n) {
        const S* x = input.data().data() + n * plane_in;
        if (!pointwise) im2col(x, g, cols.data());
        const S* col_ptr = pointwise ? x : cols.data();
        MapR<S>(out.data() + n * filters * plane_out, filters, plane_out).noalias() =
            k * CMapR<S>(col_ptr, patch, plane_out);
    }

    Shape shape{std::size_t(g.n), std::size_t(filters), std::size_t(g.ho), std::size_t(g.wo)};
    return record<S>("conv2d", std::move(shape), std::move(out), {input.node(), kernel.node()},
                     [g, filters, patch, plane_out, plane_in, pointwise](detail::Node<S>& self) {
                         auto& X = *self.inputs[0];
                         auto& K = *self.inputs[1];
                         std::vector<S> cols(pointwise ? 0 : static_cast<std::size_t>(patch * plane_out));
                         std::vector<S> dcols(pointwise ? 0 : cols.size());
                         CMapR<S> k(K.data.data(), filters, patch);
                         for (Index n = 0; n < g.n; ++n) {
                             const S* x = X.data.data() + n * plane_in;
                             CMapR<S> dy(self.grad.data() + n * filters * plane_out, filters, plane_out);
                             if (K.requires_grad) {
                                 if (!pointwise) im2col(x, g, cols.data());
                                 const S* col_ptr = pointwise ? x : cols.data();
                                 MapR<S>(K.grad_buffer().data(), filters, patch).noalias() +=
                                     dy * CMapR<S>(col_ptr, patch, plane_out).transpose();
                             }
                             if (X.requires_grad) {
                                 S* dx = X.grad_buffer().data() + n * plane_in;
                                 if (pointwise) {
                                     MapR<S>(dx, patch, plane_out).noalias() += k.transpose() * dy;
                                 } else {
                                     MapR<S>(dcols.data(), patch, plane_out).noalias() = k.transpose() * dy;
                                     col2im_add(dcols.data(), g, dx);
                                 }
                             }
                         }
                     });
}

template <typename S>
BasicTensor<S> depthwise_conv2d(const BasicTensor<S>& input, const BasicTensor<S>& kernel, Padding padding) {
    require_rank(input, 4, "depthwise_conv2d", "input");
    require_rank(kernel, 4, "depthwise_conv2d", "kernel");
    if (kernel.dim(0) != input.dim(1)) {
        throw DimensionError("depthwise_conv2d: kernel " + shape_str(kernel.shape()) + " has " +
                             std::to_string(kernel.dim(0)) + " channel groups, input " + shape_str(input.shape()) +
                             " has " + std::to_string(input.dim(1)) + " channels");
    }
    const ConvGeometry g =
        conv_geometry(input.shape(), kernel.dim(2), kernel.dim(3), padding, "depthwise_conv2d", kernel.shape());
    const Index depth = kernel.dim(1);
    const Index plane_in = g.h * g.w;
    const Index plane_out = g.ho * g.wo;
    const Index out_channels = g.c * depth;

    std::vector<S> out(static_cast<std::size_t>(g.n * out_channels * plane_out), S(0));
    const S* kdata = kernel.data().data();
    for (Index n = 0; n < g.n; ++n) {
        for (Index c = 0; c < g.c; ++c) {
            const S* x = input.data().data() + (n * g.c + c) * plane_in;
            for (Index d = 0; d < depth; ++d) {
                S* y = out.data() + (n * out_channels + c * depth + d) * plane_out;
                const S* w = kdata + (c * depth + d) * g.kh * g.kw;
                for (Index i = 0; i < g.kh; ++i) {
                    for (Index j = 0; j < g.kw; ++j) {
                        const S wij = w[i * g.kw + j];
                        const auto [lo, hi] = column_range(g, j);
                        for (Index oh = 0; oh < g.ho; ++oh) {
                            const Index ih = oh + i - g.pad_top;
                            if (ih < 0 || ih >= g.h) continue;
                            S* yrow = y + oh * g.wo;
                            const S* xrow = x + ih * g.w + (j - g.pad_left);
                            for (Index ow = lo; ow < hi; ++ow) yrow[ow] += wij * xrow[ow];
                        }
                    }
                }
            }
        }
    }

    Shape shape{std::size_t(g.n), std::size_t(out_channels), std::size_t(g.ho), std::size_t(g.wo)};
    return record<S>(
        "depthwise_conv2d", std::move(shape), std::move(out), {input.node(), kernel.node()},
        [g, depth, plane_in, plane_out, out_channels](detail::Node<S>& self) {
            auto& X = *self.inputs[0];
            auto& K = *self.inputs[1];
            S* dk = K.requires_grad ? K.grad_buffer().data() : nullptr;
            S* dxall = X.requires_grad ? X.grad_buffer().data() : nullptr;
            for (Index n = 0; n < g.n; ++n) {
                for (Index c = 0; c < g.c; ++c) {
                    const S* x = X.data.data() + (n * g.c + c) * plane_in;
                    S* dx = dxall ? dxall + (n * g.c + c) * plane_in : nullptr;
                    for (Index d = 0; d < depth; ++d) {
                        const S* dy = self.grad.data() + (n * out_channels + c * depth + d) * plane_out;
                        const S* w = K.data.data() + (c * depth + d) * g.kh * g.kw;
                        for (Index i = 0; i < g.kh; ++i) {
                            for (Index j = 0; j < g.kw; ++j) {
                                const auto [lo, hi] = column_range(g, j);
                                const S wij = w[i * g.kw + j];
                                double acc = 0;
                                for (Index oh = 0; oh < g.ho; ++oh) {
                                    const Index ih = oh + i - g.pad_top;
                                    if (ih < 0 || ih >= g.h) continue;
                                    const S* dyrow = dy + oh * g.wo;
                                    const Index shift = ih * g.w + (j - g.pad_left);
                                    if (dk) {
                                        const S* xrow = x + shift;
                                        S part = 0;
                                        for (Index ow = lo; ow < hi; ++ow) part += dyrow[ow] * xrow[ow];
                                        acc += part;
                                    }
                                    if (dx) {
                                        S* dxrow = dx + shift;
                                        for (Index ow = lo; ow < hi; ++ow) dxrow[ow] += wij * dyrow[ow];
                                    }
                                }
                                if (dk) dk[(c * depth + d) * g.kh * g.kw + i * g.kw + j] += static_cast<S>(acc);
                            }
                        }
                    }
                }
            }
        });
}

template <typename S>
BasicTensor<S> separable_conv2d(const BasicTensor<S>& input, const BasicTensor<S>& depth_kernel,
                                const BasicTensor<S>& point_kernel, Padding padding) {
    require_rank(depth_kernel, 4, "separable_conv2d", "depth kernel");
    require_rank(point_kernel, 4, "separable_conv2d", "point kernel");
    const std::size_t mid = depth_kernel.dim(0) * depth_kernel.dim(1);
    if (point_kernel.dim(1) != mid || point_kernel.dim(2) != 1 || point_kernel.dim(3) != 1) {
        throw DimensionError("separable_conv2d: depthwise stage yields " + std::to_string(mid) +
                             " channels but point kernel is " + shape_str(point_kernel.shape()));
    }
    return conv2d(depthwise_conv2d(input, depth_kernel, padding), point_kernel, Padding::Valid);
}

template <typename S>
BasicTensor<S> batch_norm(const BasicTensor<S>& input, const BasicTensor<S>& gamma, const BasicTensor<S>& beta,
                          BatchNormState<S>& state, bool training) {
    require_rank(input, 4, "batch_norm", "input");
    const std::size_t channels = input.dim(1);
    if (gamma.numel() != channels || beta.numel() != channels || state.running_mean.numel() != channels ||
        state.running_var.numel() != channels) {
        throw DimensionError("batch_norm: parameters do not match " + std::to_string(channels) + " channels of " +
                             shape_str(input.shape()));
    }
    const Index n = input.dim(0);
    if (n == 0) throw ArgumentError("batch_norm: zero batch size");
    const Index c_count = channels;
    const Index plane = input.dim(2) * input.dim(3);
    const double count = static_cast<double>(n * plane);
    const S* x = input.data().data();

    std::vector<S> xhat(input.numel());
    std::vector<S> out(input.numel());
    std::vector<S> invstd(channels);
    auto rm = state.running_mean.mutable_data();
    auto rv = state.running_var.mutable_data();
    for (Index c = 0; c < c_count; ++c) {
        double mean, var;
        if (training) {
            double acc = 0;
            for (Index b = 0; b < n; ++b) {
                const S* p = x + (b * c_count + c) * plane;
                for (Index i = 0; i < plane; ++i) acc += p[i];
            }
            mean = acc / count;
            double sq = 0;
            for (Index b = 0; b < n; ++b) {
                const S* p = x + (b * c_count + c) * plane;
                for (Index i = 0; i < plane; ++i) {
                    const double d = p[i] - mean;
                    sq += d * d;
                }
            }
            var = sq / count;
            rm[c] = static_cast<S>((1.0 - state.momentum) * rm[c] + state.momentum * mean);
            rv[c] = static_cast<S>((1.0 - state.momentum) * rv[c] + state.momentum * var);
        } else {
            mean = rm[c];
            var = rv[c];
        }
        const double is = 1.0 / std::sqrt(var + state.epsilon);
        invstd[c] = static_cast<S>(is);
        const S gm = gamma.data()[c], bt = beta.data()[c];
        for (Index b = 0; b < n; ++b) {
            const Index off = (b * c_count + c) * plane;
            for (Index i = 0; i < plane; ++i) {
                const S xh = static_cast<S>((x[off + i] - mean) * is);
                xhat[off + i] = xh;
                out[off + i] = gm * xh + bt;
            }
        }
    }

    return record<S>(
        "batch_norm", input.shape(), std::move(out), {input.node(), gamma.node(), beta.node()},
        [xhat = std::move(xhat), invstd = std::move(invstd), n, c_count, plane, count, training](detail::Node<S>& self) {
            auto& X = *self.inputs[0];
            auto& G = *self.inputs[1];
            auto& B = *self.inputs[2];
            const S* dy = self.grad.data();
            for (Index c = 0; c < c_count; ++c) {
                double sum_dy = 0, sum_dy_xhat = 0;
                for (Index b = 0; b < n; ++b) {
                    const Index off = (b * c_count + c) * plane;
                    for (Index i = 0; i < plane; ++i) {
                        sum_dy += dy[off + i];
                        sum_dy_xhat += static_cast<double>(dy[off + i]) * xhat[off + i];
                    }
                }
                if (G.requires_grad) G.grad_buffer()[c] += static_cast<S>(sum_dy_xhat);
                if (B.requires_grad) B.grad_buffer()[c] += static_cast<S>(sum_dy);
                if (!X.requires_grad) continue;
                S* dx = X.grad_buffer().data();
                const double gscale = static_cast<double>(G.data[c]) * invstd[c];
                for (Index b = 0; b < n; ++b) {
                    const Index off = (b * c_count + c) * plane;
                    for (Index i = 0; i < plane; ++i) {
                        if (training) {
                            dx[off + i] += static_cast<S>(
                                gscale / count * (count * dy[off + i] - sum_dy - xhat[off + i] * sum_dy_xhat));
                        } else {
                            dx[off + i] += static_cast<S>(gscale * dy[off + i]);
                        }
                    }
                }
            }
        });
}

template <typename S>
BasicTensor<S> elu(const BasicTensor<S>& x, S alpha) {
    std::vector<S> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const S v = x.data()[i];
        out[i] = v >= S(0) ? v : alpha * std::expm1(v);
    }
    return record<S>("elu", x.shape(), std::move(out), {x.node()}, [alpha](detail::Node<S>& self) {
        auto& X = *self.inputs[0];
        auto& g = X.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i)
            g[i] += self.grad[i] * (X.data[i] >= S(0) ? S(1) : self.data[i] + alpha);
    });
}

template <typename S>
BasicTensor<S> relu(const BasicTensor<S>& x) {
    std::vector<S> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(x.data()[i], S(0));
    return record<S>("relu", x.shape(), std::move(out), {x.node()}, [](detail::Node<S>& self) {
        auto& X = *self.inputs[0];
        auto& g = X.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (X.data[i] > S(0)) g[i] += self.grad[i];
    });
}

template <typename S>
BasicTensor<S> sigmoid(const BasicTensor<S>& x) {
    std::vector<S> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const S v = x.data()[i];
        if (v >= S(0)) {
            out[i] = S(1) / (S(1) + std::exp(-v));
        } else {
            const S e = std::exp(v);
            out[i] = e / (S(1) + e);
        }
    }
    return record<S>("sigmoid", x.shape(), std::move(out), {x.node()}, [](detail::Node<S>& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const S y = self.data[i];
            g[i] += self.grad[i] * y * (S(1) - y);
        }
    });
}

template <typename S>
BasicTensor<S> softmax(const BasicTensor<S>& x, std::size_t axis) {
    if (axis >= x.rank())
        throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " + shape_str(x.shape()));
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
    for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
    const std::size_t len = x.dim(axis);
    std::vector<S> out(x.numel());
    const S* in = x.data().data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t r = 0; r < inner; ++r) {
            const std::size_t base = o * len * inner + r;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < len; ++k) mx = std::max<double>(mx, in[base + k * inner]);
            double total = 0;
            for (std::size_t k = 0; k < len; ++k) total += std::exp(in[base + k * inner] - mx);
            for (std::size_t k = 0; k < len; ++k)
                out[base + k * inner] = static_cast<S>(std::exp(in[base + k * inner] - mx) / total);
        }
    }
    return record<S>("softmax", x.shape(), std::move(out), {x.node()},
                     [outer, inner, len](detail::Node<S>& self) {
                         auto& g = self.inputs[0]->grad_buffer();
                         for (std::size_t o = 0; o < outer; ++o) {
                             for (std::size_t r = 0; r < inner; ++r) {
                                 const std::size_t base = o * len * inner + r;
                                 double dot = 0;
                                 for (std::size_t k = 0; k < len; ++k)
                                     dot += static_cast<double>(self.grad[base + k * inner]) * self.data[base + k * inner];
                                 for (std::size_t k = 0; k < len; ++k) {
                                     const std::size_t i = base + k * inner;
                                     g[i] += static_cast<S>(self.data[i] * (self.grad[i] - dot));
                                 }
                             }
                         }
                     });
}

template <typename S>
BasicTensor<S> avg_pool(const BasicTensor<S>& input, std::size_t window) {
    require_rank(input, 4, "avg_pool", "input");
    if (window == 0) throw ArgumentError("avg_pool: window must be positive");
    const std::size_t w = input.dim(3);
    const std::size_t wo = w / window;
    if (wo == 0) {
        throw DimensionError("avg_pool: window " + std::to_string(window) + " wider than input " +
                             shape_str(input.shape()));
    }
    if (w % window != 0) {
        record_warning("avg_pool: width " + std::to_string(w) + " is not a multiple of " + std::to_string(window) +
                       "; dropping " + std::to_string(w % window) + " trailing column(s)");
    }
    const std::size_t rows = input.dim(0) * input.dim(1) * input.dim(2);
    std::vector<S> out(rows * wo);
    const S* x = input.data().data();
    const double inv = 1.0 / static_cast<double>(window);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t o = 0; o < wo; ++o) {
            double acc = 0;
            for (std::size_t t = 0; t < window; ++t) acc += x[r * w + o * window + t];
            out[r * wo + o] = static_cast<S>(acc * inv);
        }
    }
    Shape shape{input.dim(0), input.dim(1), input.dim(2), wo};
    return record<S>("avg_pool", std::move(shape), std::move(out), {input.node()},
                     [rows, w, wo, window](detail::Node<S>& self) {
                         auto& g = self.inputs[0]->grad_buffer();
                         const S inv = S(1) / static_cast<S>(window);
                         for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t o = 0; o < wo; ++o)
                                 for (std::size_t t = 0; t < window; ++t)
                                     g[r * w + o * window + t] += self.grad[r * wo + o] * inv;
                     });
}

template <typename S>
BasicTensor<S> avg_pool_same(const BasicTensor<S>& input, std::size_t window) {
    require_rank(input, 4, "avg_pool_same", "input");
    if (window == 0) throw ArgumentError("avg_pool_same: window must be positive");
    const Index w = input.dim(3);
    const Index k = window;
    const Index pad = (k - 1) / 2;
    const std::size_t rows = input.dim(0) * input.dim(1) * input.dim(2);
    std::vector<S> out(input.numel());
    const S* x = input.data().data();
    for (std::size_t r = 0; r < rows; ++r) {
        for (Index o = 0; o < w; ++o) {
            const Index lo = std::max<Index>(0, o - pad);
            const Index hi = std::min<Index>(w, o - pad + k);
            double acc = 0;
            for (Index t = lo; t < hi; ++t) acc += x[r * w + t];
            out[r * w + o] = static_cast<S>(acc / static_cast<double>(hi - lo));
        }
    }
    return record<S>("avg_pool_same", input.shape(), std::move(out), {input.node()},
                     [rows, w, k, pad](detail::Node<S>& self) {
                         auto& g = self.inputs[0]->grad_buffer();
                         for (std::size_t r = 0; r < rows; ++r) {
                             for (Index o = 0; o < w; ++o) {
                                 const Index lo = std::max<Index>(0, o - pad);
                                 const Index hi = std::min<Index>(w, o - pad + k);
                                 const S share = self.grad[r * w + o] / static_cast<S>(hi - lo);
                                 for (Index t = lo; t < hi; ++t) g[r * w + t] += share;
                             }
                         }
                     });
}

template <typename S>
BasicTensor<S> global_avg_pool(const BasicTensor<S>& input) {
    require_rank(input, 4, "global_avg_pool", "input");
    const std::size_t maps = input.dim(0) * input.dim(1);
    const std::size_t plane = input.dim(2) * input.dim(3);
    if (plane == 0) throw DimensionError("global_avg_pool: empty spatial extent " + shape_str(input.shape()));
    std::vector<S> out(maps);
    const S* x = input.data().data();
    for (std::size_t m = 0; m < maps; ++m) {
        double acc = 0;
        for (std::size_t i = 0; i < plane; ++i) acc += x[m * plane + i];
        out[m] = static_cast<S>(acc / static_cast<double>(plane));
    }
    Shape shape{input.dim(0), input.dim(1), 1, 1};
    return record<S>("global_avg_pool", std::move(shape), std::move(out), {input.node()},
                     [maps, plane](detail::Node<S>& self) {
                         auto& g = self.inputs[0]->grad_buffer();
                         const S inv = S(1) / static_cast<S>(plane);
                         for (std::size_t m = 0; m < maps; ++m)
                             for (std::size_t i = 0; i < plane; ++i) g[m * plane + i] += self.grad[m] * inv;
                     });
}

template <typename S>
BasicTensor<S> dropout(const BasicTensor<S>& input, double rate, bool training, Rng& rng) {
    if (!(rate >= 0.0 && rate < 1.0)) throw ArgumentError("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
    if (!training || rate == 0.0) return input;
    std::bernoulli_distribution keep(1.0 - rate);
    const S survivor = static_cast<S>(1.0 / (1.0 - rate));
    std::vector<S> mask(input.numel());
    std::vector<S> out(input.numel());
    for (std::size_t i = 0; i < mask.size(); ++i) {
        mask[i] = keep(rng) ? survivor : S(0);
        out[i] = input.data()[i] * mask[i];
    }
    return record<S>("dropout", input.shape(), std::move(out), {input.node()},
                     [mask = std::move(mask)](detail::Node<S>& self) {
                         auto& g = self.inputs[0]->grad_buffer();
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
                     });
}

template <typename S>
BasicTensor<S> concat_channels(std::span<const BasicTensor<S>> parts) {
    if (parts.empty()) throw ArgumentError("concat_channels: nothing to concatenate");
    for (const auto& p : parts) require_rank(p, 4, "concat_channels", "part");
    const std::size_t n = parts[0].dim(0), h = parts[0].dim(2), w = parts[0].dim(3);
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.dim(0) != n || p.dim(2) != h || p.dim(3) != w) {
            throw DimensionError("concat_channels: " + shape_str(p.shape()) + " does not match " +
                                 shape_str(parts[0].shape()));
        }
        widths.push_back(p.dim(1));
        total += p.dim(1);
    }
    const std::size_t plane = h * w;
    std::vector<S> out(n * total * plane);
    std::vector<NodePtr<S>> inputs;
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t cp = p.dim(1);
        for (std::size_t b = 0; b < n; ++b)
            std::copy_n(p.data().data() + b * cp * plane, cp * plane, out.data() + (b * total + offset) * plane);
        offset += cp;
        inputs.push_back(p.node());
    }
    return record<S>("concat_channels", {n, total, h, w}, std::move(out), std::move(inputs),
                     [widths, n, total, plane](detail::Node<S>& self) {
                         std::size_t offset = 0;
                         for (std::size_t k = 0; k < widths.size(); ++k) {
                             auto& in = *self.inputs[k];
                             if (in.requires_grad) {
                                 auto& g = in.grad_buffer();
                                 for (std::size_t b = 0; b < n; ++b) {
                                     const S* src = self.grad.data() + (b * total + offset) * plane;
                                     S* dst = g.data() + b * widths[k] * plane;
                                     for (std::size_t i = 0; i < widths[k] * plane; ++i) dst[i] += src[i];
                                 }
                             }
                             offset += widths[k];
                         }
                     });
}

template <typename S>
BasicTensor<S> channel_scale(const BasicTensor<S>& x, const BasicTensor<S>& gates) {
    require_rank(x, 4, "channel_scale", "input");
    const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
    if (!gates.defined() || gates.numel() != n * c || gates.dim(0) != n) {
        throw DimensionError("channel_scale: gates " + (gates.defined() ? shape_str(gates.shape()) : "undefined") +
                             " do not match " + shape_str(x.shape()));
    }
    std::vector<S> out(x.numel());
    for (std::size_t m = 0; m < n * c; ++m) {
        const S gm = gates.data()[m];
        for (std::size_t i = 0; i < plane; ++i) out[m * plane + i] = gm * x.data()[m * plane + i];
    }
    return record<S>("channel_scale", x.shape(), std::move(out), {x.node(), gates.node()},
                     [n, c, plane](detail::Node<S>& self) {
                         auto& X = *self.inputs[0];
                         auto& G = *self.inputs[1];
                         for (std::size_t m = 0; m < n * c; ++m) {
                             const S* dy = self.grad.data() + m * plane;
                             if (X.requires_grad) {
                                 S* dx = X.grad_buffer().data() + m * plane;
                                 const S gm = G.data[m];
                                 for (std::size_t i = 0; i < plane; ++i) dx[i] += gm * dy[i];
                             }
                             if (G.requires_grad) {
                                 const S* xv = X.data.data() + m * plane;
                                 double acc = 0;
                                 for (std::size_t i = 0; i < plane; ++i) acc += static_cast<double>(dy[i]) * xv[i];
                                 G.grad_buffer()[m] += static_cast<S>(acc);
                             }
                         }
                     });
}

template <typename S>
BasicTensor<S> cross_entropy(const BasicTensor<S>& logits, const BasicTensor<S>& labels) {
    require_rank(logits, 2, "cross_entropy", "logits");
    if (!labels.defined() || labels.shape() != logits.shape()) {
        throw DimensionError("cross_entropy: labels " + (labels.defined() ? shape_str(labels.shape()) : "undefined") +
                             " do not match logits " + shape_str(logits.shape()));
    }
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    std::vector<std::size_t> target(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t ones = 0;
        for (std::size_t j = 0; j < k; ++j) {
            const S v = labels.data()[i * k + j];
            if (v == S(1)) {
                ++ones;
                target[i] = j;
            } else if (v != S(0)) {
                ones = 2;
            }
        }
        if (ones != 1) throw ArgumentError("cross_entropy: label row " + std::to_string(i) + " is not one-hot");
    }
    std::vector<S> probs(n * k);
    double loss = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const S* z = logits.data().data() + i * k;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < k; ++j) mx = std::max<double>(mx, z[j]);
        double total = 0;
        for (std::size_t j = 0; j < k; ++j) total += std::exp(z[j] - mx);
        const double lse = mx + std::log(total);
        loss += lse - z[target[i]];
        for (std::size_t j = 0; j < k; ++j) probs[i * k + j] = static_cast<S>(std::exp(z[j] - lse));
    }
    return record<S>("cross_entropy", Shape{}, {static_cast<S>(loss)}, {logits.node(), labels.node()},
                     [probs = std::move(probs), target = std::move(target), k](detail::Node<S>& self) {
                         auto& L = *self.inputs[0];
                         if (!L.requires_grad) return;
                         auto& g = L.grad_buffer();
                         const S up = self.grad[0];
                         for (std::size_t i = 0; i < target.size(); ++i)
                             for (std::size_t j = 0; j < k; ++j)
                                 g[i * k + j] += up * (probs[i * k + j] - (j == target[i] ? S(1) : S(0)));
                     });
}

#define ADHDNET_INSTANTIATE_OPS(S)                                                                            \
    template BasicTensor<S> matmul(const BasicTensor<S>&, const BasicTensor<S>&);                             \
    template BasicTensor<S> linear(const BasicTensor<S>&, const BasicTensor<S>&, const BasicTensor<S>&);      \
    template BasicTensor<S> add(const BasicTensor<S>&, const BasicTensor<S>&);                                \
    template BasicTensor<S> mul(const BasicTensor<S>&, const BasicTensor<S>&);                                \
    template BasicTensor<S> scale(const BasicTensor<S>&, S);                                                  \
    template BasicTensor<S> sum(const BasicTensor<S>&);                                                       \
    template BasicTensor<S> reshape(const BasicTensor<S>&, Shape);                                            \
    template BasicTensor<S> conv2d(const BasicTensor<S>&, const BasicTensor<S>&, Padding);                    \
    template BasicTensor<S> depthwise_conv2d(const BasicTensor<S>&, const BasicTensor<S>&, Padding);          \
    template BasicTensor<S> separable_conv2d(const BasicTensor<S>&, const BasicTensor<S>&,                    \
                                             const BasicTensor<S>&, Padding);                                 \
    template BasicTensor<S> batch_norm(const BasicTensor<S>&, const BasicTensor<S>&, const BasicTensor<S>&,   \
                                       BatchNormState<S>&, bool);                                             \
    template BasicTensor<S> elu(const BasicTensor<S>&, S);                                                    \
    template BasicTensor<S> relu(const BasicTensor<S>&);                                                      \
    template BasicTensor<S> sigmoid(const BasicTensor<S>&);                                                   \
    template BasicTensor<S> softmax(const BasicTensor<S>&, std::size_t);                                      \
    template BasicTensor<S> avg_pool(const BasicTensor<S>&, std::size_t);                                     \
    template BasicTensor<S> avg_pool_same(const BasicTensor<S>&, std::size_t);                                \
    template BasicTensor<S> global_avg_pool(const BasicTensor<S>&);                                           \
    template BasicTensor<S> dropout(const BasicTensor<S>&, double, bool, Rng&);                               \
    template BasicTensor<S> concat_channels(std::span<const BasicTensor<S>>);                                 \
    template BasicTensor<S> channel_scale(const BasicTensor<S>&, const BasicTensor<S>&);                      \
    template BasicTensor<S> cross_entropy(const BasicTensor<S>&, const BasicTensor<S>&);

ADHDNET_INSTANTIATE_OPS(float)
ADHDNET_INSTANTIATE_OPS(double)

#undef ADHDNET_INSTANTIATE_OPS

}  // namespace adhdnet
