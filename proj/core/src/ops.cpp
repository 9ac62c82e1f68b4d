#include "difforge/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <string>

namespace difforge::ops {
namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

void require_rank(const Var& x, std::size_t rank, const char* what) {
    if (x.shape().rank() != rank)
        throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " + x.shape().str());
}

Grid& grad_of(Node& self, std::size_t i) { return self.parents[i]->grad_buffer(); }
bool wants(const Node& self, std::size_t i) { return self.parents[i]->requires_grad; }
const Grid& value_of(const Node& self, std::size_t i) { return self.parents[i]->value; }

struct ConvGeometry {
    std::size_t batch, cin, h, w, cout, kh, kw, stride, pad, oh, ow;
    std::size_t col_rows() const { return cin * kh * kw; }
    std::size_t col_cols() const { return oh * ow; }
};

// cols(ci*kh*kw + ky*kw + kx, oy*ow + ox) = x(ci, oy*s + ky - p, ox*s + kx - p)
void im2col(const double* x, const ConvGeometry& g, double* cols) {
    const std::size_t n = g.col_cols();
    for (std::size_t ci = 0; ci < g.cin; ++ci)
        for (std::size_t ky = 0; ky < g.kh; ++ky)
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                double* row = cols + ((ci * g.kh + ky) * g.kw + kx) * n;
                const double* plane = x + ci * g.h * g.w;
                for (std::size_t oy = 0; oy < g.oh; ++oy) {
                    const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
                    double* dst = row + oy * g.ow;
                    if (iy < 0 || iy >= static_cast<long>(g.h)) {
                        std::fill(dst, dst + g.ow, 0.0);
                        continue;
                    }
                    const double* src = plane + iy * g.w;
                    for (std::size_t ox = 0; ox < g.ow; ++ox) {
                        const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
                        dst[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? 0.0 : src[ix];
                    }
                }
            }
}

void col2im_add(const double* cols, const ConvGeometry& g, double* dx) {
    const std::size_t n = g.col_cols();
    for (std::size_t ci = 0; ci < g.cin; ++ci)
        for (std::size_t ky = 0; ky < g.kh; ++ky)
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                const double* row = cols + ((ci * g.kh + ky) * g.kw + kx) * n;
                double* plane = dx + ci * g.h * g.w;
                for (std::size_t oy = 0; oy < g.oh; ++oy) {
                    const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
                    if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
                    double* dst = plane + iy * g.w;
                    const double* src = row + oy * g.ow;
                    for (std::size_t ox = 0; ox < g.ow; ++ox) {
                        const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
                        if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += src[ox];
                    }
                }
            }
}

}  // namespace

Var add(const Var& a, const Var& b) {
    require_same_shape(a.shape(), b.shape(), "add");
    return make_result(a.value() + b.value(), {a, b}, [](Node& self) {
        if (wants(self, 0)) grad_of(self, 0) += self.grad;
        if (wants(self, 1)) grad_of(self, 1) += self.grad;
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a.shape(), b.shape(), "sub");
    return make_result(a.value() - b.value(), {a, b}, [](Node& self) {
        if (wants(self, 0)) grad_of(self, 0) += self.grad;
        if (wants(self, 1)) grad_of(self, 1) -= self.grad;
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a.shape(), b.shape(), "mul");
    Grid out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    return make_result(std::move(out), {a, b}, [](Node& self) {
        const Grid& av = value_of(self, 0);
        const Grid& bv = value_of(self, 1);
        if (wants(self, 0)) {
            Grid& ga = grad_of(self, 0);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * bv[i];
        }
        if (wants(self, 1)) {
            Grid& gb = grad_of(self, 1);
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += self.grad[i] * av[i];
        }
    });
}

Var scale(const Var& a, double s) {
    return make_result(a.value() * s, {a}, [s](Node& self) {
        Grid& ga = grad_of(self, 0);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * self.grad[i];
    });
}

Var add_channel_bias(const Var& x, const Var& bias) {
    require_rank(x, 4, "add_channel_bias");
    const Shape s = x.shape();
    const std::size_t B = s[0], C = s[1], HW = s[2] * s[3];
    if (bias.value().size() != C) throw ShapeError("add_channel_bias: bias length must equal channel count");
    Grid out = x.value();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) {
            double* p = out.data() + (b * C + c) * HW;
            const double v = bias.value()[c];
            for (std::size_t i = 0; i < HW; ++i) p[i] += v;
        }
    return make_result(std::move(out), {x, bias}, [B, C, HW](Node& self) {
        if (wants(self, 0)) grad_of(self, 0) += self.grad;
        if (wants(self, 1)) {
            Grid& gb = grad_of(self, 1);
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t c = 0; c < C; ++c) {
                    const double* p = self.grad.data() + (b * C + c) * HW;
                    gb[c] += std::accumulate(p, p + HW, 0.0);
                }
        }
    });
}

Var add_batch_channel(const Var& x, const Var& v) {
    require_rank(x, 4, "add_batch_channel");
    const Shape s = x.shape();
    const std::size_t B = s[0], C = s[1], HW = s[2] * s[3];
    if (v.shape() != Shape{B, C}) throw ShapeError("add_batch_channel: expected (B,C) operand, got " + v.shape().str());
    Grid out = x.value();
    for (std::size_t bc = 0; bc < B * C; ++bc) {
        double* p = out.data() + bc * HW;
        const double add = v.value()[bc];
        for (std::size_t i = 0; i < HW; ++i) p[i] += add;
    }
    return make_result(std::move(out), {x, v}, [B, C, HW](Node& self) {
        if (wants(self, 0)) grad_of(self, 0) += self.grad;
        if (wants(self, 1)) {
            Grid& gv = grad_of(self, 1);
            for (std::size_t bc = 0; bc < B * C; ++bc) {
                const double* p = self.grad.data() + bc * HW;
                gv[bc] += std::accumulate(p, p + HW, 0.0);
            }
        }
    });
}

Var mul_batch_channel(const Var& x, const Var& v) {
    require_rank(x, 4, "mul_batch_channel");
    const Shape s = x.shape();
    const std::size_t B = s[0], C = s[1], HW = s[2] * s[3];
    if (v.shape() != Shape{B, C}) throw ShapeError("mul_batch_channel: expected (B,C) operand, got " + v.shape().str());
    Grid out = x.value();
    for (std::size_t bc = 0; bc < B * C; ++bc) {
        double* p = out.data() + bc * HW;
        const double k = v.value()[bc];
        for (std::size_t i = 0; i < HW; ++i) p[i] *= k;
    }
    return make_result(std::move(out), {x, v}, [x, v, B, C, HW](Node& self) {
        if (wants(self, 0)) {
            Grid& gx = grad_of(self, 0);
            for (std::size_t bc = 0; bc < B * C; ++bc) {
                const double k = v.value()[bc];
                for (std::size_t i = 0; i < HW; ++i) gx[bc * HW + i] += k * self.grad[bc * HW + i];
            }
        }
        if (wants(self, 1)) {
            Grid& gv = grad_of(self, 1);
            for (std::size_t bc = 0; bc < B * C; ++bc) {
                double acc = 0.0;
                for (std::size_t i = 0; i < HW; ++i) acc += x.value()[bc * HW + i] * self.grad[bc * HW + i];
                gv[bc] += acc;
            }
        }
    });
}

Var conv2d(const Var& x, const Var& kernel, std::size_t stride, std::size_t padding) {
    require_rank(x, 4, "conv2d input");
    require_rank(kernel, 4, "conv2d kernel");
    const Shape xs = x.shape();
    const Shape ks = kernel.shape();
    if (ks[1] != xs[1])
        throw ShapeError("conv2d: input has " + std::to_string(xs[1]) + " channels, kernel expects " + std::to_string(ks[1]));
    if (ks[2] % 2 == 0 || ks[3] % 2 == 0) throw ShapeError("conv2d: kernel extents must be odd");
    if (stride == 0) throw ShapeError("conv2d: stride must be positive");
    if (xs[2] + 2 * padding < ks[2] || xs[3] + 2 * padding < ks[3]) throw ShapeError("conv2d: kernel larger than padded input");

    ConvGeometry g{xs[0], xs[1], xs[2], xs[3], ks[0], ks[2], ks[3], stride, padding, 0, 0};
    g.oh = (g.h + 2 * g.pad - g.kh) / g.stride + 1;
    g.ow = (g.w + 2 * g.pad - g.kw) / g.stride + 1;

    Grid out(Shape{g.batch, g.cout, g.oh, g.ow});
    std::vector<double> cols(g.col_rows() * g.col_cols());
    CMapR wm(kernel.value().data(), g.cout, g.col_rows());
    for (std::size_t b = 0; b < g.batch; ++b) {
        im2col(x.value().data() + b * g.cin * g.h * g.w, g, cols.data());
        CMapR cm(cols.data(), g.col_rows(), g.col_cols());
        MapR om(out.data() + b * g.cout * g.col_cols(), g.cout, g.col_cols());
        om.noalias() = wm * cm;
    }

    return make_result(std::move(out), {x, kernel}, [g](Node& self) {
        const Grid& xv = value_of(self, 0);
        const Grid& kv = value_of(self, 1);
        const bool need_x = wants(self, 0);
        const bool need_k = wants(self, 1);
        std::vector<double> cols(g.col_rows() * g.col_cols());
        CMapR wm(kv.data(), g.cout, g.col_rows());
        MatR dcols;
        for (std::size_t b = 0; b < g.batch; ++b) {
            CMapR dout(self.grad.data() + b * g.cout * g.col_cols(), g.cout, g.col_cols());
            if (need_k) {
                im2col(xv.data() + b * g.cin * g.h * g.w, g, cols.data());
                CMapR cm(cols.data(), g.col_rows(), g.col_cols());
                MapR dw(grad_of(self, 1).data(), g.cout, g.col_rows());
                dw.noalias() += dout * cm.transpose();
            }
            if (need_x) {
                dcols.noalias() = wm.transpose() * dout;
                col2im_add(dcols.data(), g, grad_of(self, 0).data() + b * g.cin * g.h * g.w);
            }
        }
    });
}

Var reshape(const Var& x, Shape shape) {
    return make_result(x.value().reshaped(shape), {x}, [](Node& self) {
        if (!wants(self, 0)) return;
        Grid& g = grad_of(self, 0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Var dense(const Var& x, const Var& weight, const Var& bias) {
    require_rank(x, 2, "dense input");
    require_rank(weight, 2, "dense weight");
    const std::size_t B = x.shape()[0], in = x.shape()[1], out_dim = weight.shape()[0];
    if (weight.shape()[1] != in) throw ShapeError("dense: weight expects " + std::to_string(weight.shape()[1]) + " inputs, got " + std::to_string(in));
    if (bias.value().size() != out_dim) throw ShapeError("dense: bias length mismatch");
    Grid out(Shape{B, out_dim});
    MapR om(out.data(), B, out_dim);
    om.noalias() = CMapR(x.value().data(), B, in) * CMapR(weight.value().data(), out_dim, in).transpose();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t o = 0; o < out_dim; ++o) out[b * out_dim + o] += bias.value()[o];
    return make_result(std::move(out), {x, weight, bias}, [B, in, out_dim](Node& self) {
        CMapR dout(self.grad.data(), B, out_dim);
        if (wants(self, 0)) {
            MapR dx(grad_of(self, 0).data(), B, in);
            dx.noalias() += dout * CMapR(value_of(self, 1).data(), out_dim, in);
        }
        if (wants(self, 1)) {
            MapR dw(grad_of(self, 1).data(), out_dim, in);
            dw.noalias() += dout.transpose() * CMapR(value_of(self, 0).data(), B, in);
        }
        if (wants(self, 2)) {
            Grid& db = grad_of(self, 2);
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t o = 0; o < out_dim; ++o) db[o] += self.grad[b * out_dim + o];
        }
    });
}

Var concat_channels(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_channels: no inputs");
    for (const auto& p : parts) require_rank(p, 4, "concat_channels");
    const Shape s0 = parts[0].shape();
    const std::size_t B = s0[0], HW = s0[2] * s0[3];
    std::vector<std::size_t> channels;
    std::size_t total = 0;
    for (const auto& p : parts) {
        const Shape s = p.shape();
        if (s[0] != B || s[2] != s0[2] || s[3] != s0[3]) throw ShapeError("concat_channels: batch/spatial mismatch " + s.str() + " vs " + s0.str());
        channels.push_back(s[1]);
        total += s[1];
    }
    Grid out(Shape{B, total, s0[2], s0[3]});
    for (std::size_t b = 0; b < B; ++b) {
        std::size_t offset = 0;
        for (std::size_t i = 0; i < parts.size(); ++i) {
            const double* src = parts[i].value().data() + b * channels[i] * HW;
            std::copy(src, src + channels[i] * HW, out.data() + (b * total + offset) * HW);
            offset += channels[i];
        }
    }
    std::vector<Var> parents(parts.begin(), parts.end());
    return make_result(std::move(out), std::move(parents), [B, HW, total, channels](Node& self) {
        for (std::size_t b = 0; b < B; ++b) {
            std::size_t offset = 0;
            for (std::size_t i = 0; i < channels.size(); ++i) {
                if (wants(self, i)) {
                    const double* src = self.grad.data() + (b * total + offset) * HW;
                    double* dst = grad_of(self, i).data() + b * channels[i] * HW;
                    for (std::size_t k = 0; k < channels[i] * HW; ++k) dst[k] += src[k];
                }
                offset += channels[i];
            }
        }
    });
}

std::vector<Var> split_channels(const Var& x, std::span<const std::size_t> sizes) {
    require_rank(x, 4, "split_channels");
    const Shape s = x.shape();
    const std::size_t B = s[0], C = s[1], HW = s[2] * s[3];
    if (std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}) != C) throw ShapeError("split_channels: sizes must sum to channel count");
    std::vector<Var> result;
    std::size_t offset = 0;
    for (std::size_t n : sizes) {
        Grid part(Shape{B, n, s[2], s[3]});
        for (std::size_t b = 0; b < B; ++b) {
            const double* src = x.value().data() + (b * C + offset) * HW;
            std::copy(src, src + n * HW, part.data() + b * n * HW);
        }
        result.push_back(make_result(std::move(part), {x}, [B, C, HW, n, offset](Node& self) {
            Grid& gx = grad_of(self, 0);
            for (std::size_t b = 0; b < B; ++b) {
                const double* src = self.grad.data() + b * n * HW;
                double* dst = gx.data() + (b * C + offset) * HW;
                for (std::size_t k = 0; k < n * HW; ++k) dst[k] += src[k];
            }
        }));
        offset += n;
    }
    return result;
}

Var upsample_nearest2x(const Var& x) {
    require_rank(x, 4, "upsample_nearest2x");
    const Shape s = x.shape();
    const std::size_t planes = s[0] * s[1], H = s[2], W = s[3];
    Grid out(Shape{s[0], s[1], 2 * H, 2 * W});
    for (std::size_t p = 0; p < planes; ++p) {
        const double* src = x.value().data() + p * H * W;
        double* dst = out.data() + p * 4 * H * W;
        for (std::size_t y = 0; y < 2 * H; ++y)
            for (std::size_t xx = 0; xx < 2 * W; ++xx) dst[y * 2 * W + xx] = src[(y / 2) * W + xx / 2];
    }
    return make_result(std::move(out), {x}, [planes, H, W](Node& self) {
        Grid& gx = grad_of(self, 0);
        for (std::size_t p = 0; p < planes; ++p) {
            const double* src = self.grad.data() + p * 4 * H * W;
            double* dst = gx.data() + p * H * W;
            for (std::size_t y = 0; y < 2 * H; ++y)
                for (std::size_t xx = 0; xx < 2 * W; ++xx) dst[(y / 2) * W + xx / 2] += src[y * 2 * W + xx];
        }
    });
}

Var avg_pool2x2(const Var& x) {
    require_rank(x, 4, "avg_pool2x2");
    const Shape s = x.shape();
    if (s[2] % 2 || s[3] % 2) throw ShapeError("avg_pool2x2: spatial extents must be even, got " + s.str());
    const std::size_t planes = s[0] * s[1], H = s[2] / 2, W = s[3] / 2;
    Grid out(Shape{s[0], s[1], H, W});
    for (std::size_t p = 0; p < planes; ++p) {
        const double* src = x.value().data() + p * 4 * H * W;
        double* dst = out.data() + p * H * W;
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t xx = 0; xx < W; ++xx) {
                const double* r0 = src + (2 * y) * 2 * W + 2 * xx;
                const double* r1 = r0 + 2 * W;
                dst[y * W + xx] = 0.25 * (r0[0] + r0[1] + r1[0] + r1[1]);
            }
    }
    return make_result(std::move(out), {x}, [planes, H, W](Node& self) {
        Grid& gx = grad_of(self, 0);
        for (std::size_t p = 0; p < planes; ++p) {
            const double* src = self.grad.data() + p * H * W;
            double* dst = gx.data() + p * 4 * H * W;
            for (std::size_t y = 0; y < H; ++y)
                for (std::size_t xx = 0; xx < W; ++xx) {
                    const double g = 0.25 * src[y * W + xx];
                    double* r0 = dst + (2 * y) * 2 * W + 2 * xx;
                    double* r1 = r0 + 2 * W;
                    r0[0] += g;
                    r0[1] += g;
                    r1[0] += g;
                    r1[1] += g;
                }
        }
    });
}

Var group_norm(const Var& x, std::size_t groups, const Var& gamma, const Var& beta, double eps) {
    require_rank(x, 4, "group_norm");
    const Shape s = x.shape();
    const std::size_t B = s[0], C = s[1], HW = s[2] * s[3];
    if (groups == 0 || C % groups) throw ShapeError("group_norm: channels not divisible by groups");
    if (gamma.value().size() != C || beta.value().size() != C) throw ShapeError("group_norm: affine parameters must have one entry per channel");
    const std::size_t per_group = C / groups;
    const std::size_t n = per_group * HW;

    auto xhat = std::make_shared<Grid>(s);
    auto inv_std = std::make_shared<std::vector<double>>(B * groups);
    Grid out(s);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t g = 0; g < groups; ++g) {
            const std::size_t base = (b * C + g * per_group) * HW;
            const double* px = x.value().data() + base;
            double mu = 0.0;
            for (std::size_t i = 0; i < n; ++i) mu += px[i];
            mu /= static_cast<double>(n);
            double var = 0.0;
            for (std::size_t i = 0; i < n; ++i) var += (px[i] - mu) * (px[i] - mu);
            var /= static_cast<double>(n);
            const double is = 1.0 / std::sqrt(var + eps);
            (*inv_std)[b * groups + g] = is;
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t c = g * per_group + i / HW;
                const double xh = (px[i] - mu) * is;
                (*xhat)[base + i] = xh;
                out[base + i] = gamma.value()[c] * xh + beta.value()[c];
            }
        }

    return make_result(std::move(out), {x, gamma, beta}, [=](Node& self) {
        const Grid& gv = value_of(self, 1);
        const Grid& dy = self.grad;
        if (wants(self, 1) || wants(self, 2)) {
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t c = 0; c < C; ++c) {
                    const std::size_t base = (b * C + c) * HW;
                    double sg = 0.0, sb = 0.0;
                    for (std::size_t i = 0; i < HW; ++i) {
                        sg += dy[base + i] * (*xhat)[base + i];
                        sb += dy[base + i];
                    }
                    if (wants(self, 1)) grad_of(self, 1)[c] += sg;
                    if (wants(self, 2)) grad_of(self, 2)[c] += sb;
                }
        }
        if (!wants(self, 0)) return;
        Grid& dx = grad_of(self, 0);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t g = 0; g < groups; ++g) {
                const std::size_t base = (b * C + g * per_group) * HW;
                double sum_d = 0.0, sum_dx = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    const double d = dy[base + i] * gv[g * per_group + i / HW];
                    sum_d += d;
                    sum_dx += d * (*xhat)[base + i];
                }
                const double is = (*inv_std)[b * groups + g];
                const double inv_n = 1.0 / static_cast<double>(n);
                for (std::size_t i = 0; i < n; ++i) {
                    const double d = dy[base + i] * gv[g * per_group + i / HW];
                    dx[base + i] += is * (d - inv_n * sum_d - (*xhat)[base + i] * inv_n * sum_dx);
                }
            }
    });
}

Var silu(const Var& x) {
    Grid out = x.value();
    for (double& v : out.values()) v = v / (1.0 + std::exp(-v));
    return make_result(std::move(out), {x}, [](Node& self) {
        const Grid& xv = value_of(self, 0);
        Grid& gx = grad_of(self, 0);
        for (std::size_t i = 0; i < gx.size(); ++i) {
            const double sig = 1.0 / (1.0 + std::exp(-xv[i]));
            gx[i] += self.grad[i] * sig * (1.0 + xv[i] * (1.0 - sig));
        }
    });
}

Var sum(const Var& x) {
    return make_result(Grid::scalar(difforge::sum(x.value())), {x}, [](Node& self) {
        Grid& gx = grad_of(self, 0);
        const double g = self.grad[0];
        for (double& v : gx.values()) v += g;
    });
}

Var mean(const Var& x) {
    const double n = static_cast<double>(x.value().size());
    return make_result(Grid::scalar(difforge::sum(x.value()) / n), {x}, [n](Node& self) {
        Grid& gx = grad_of(self, 0);
        const double g = self.grad[0] / n;
        for (double& v : gx.values()) v += g;
    });
}

Var mse(const Var& a, const Var& b) {
    require_same_shape(a.shape(), b.shape(), "mse");
    const std::size_t n = a.value().size();
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = a.value()[i] - b.value()[i];
        acc += d * d;
    }
    return make_result(Grid::scalar(acc / static_cast<double>(n)), {a, b}, [n](Node& self) {
        const Grid& av = value_of(self, 0);
        const Grid& bv = value_of(self, 1);
        const double k = 2.0 * self.grad[0] / static_cast<double>(n);
        if (wants(self, 0)) {
            Grid& ga = grad_of(self, 0);
            for (std::size_t i = 0; i < n; ++i) ga[i] += k * (av[i] - bv[i]);
        }
        if (wants(self, 1)) {
            Grid& gb = grad_of(self, 1);
            for (std::size_t i = 0; i < n; ++i) gb[i] -= k * (av[i] - bv[i]);
        }
    });
}

namespace {

Grid softmax_values(const Grid& scores) {
    const Shape s = scores.shape();
    const std::size_t B = s[0], C = s[1], HW = s[2] * s[3];
    Grid p(s);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < HW; ++i) {
            const std::size_t base = b * C * HW + i;
            double mx = scores[base];
            for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, scores[base + c * HW]);
            double z = 0.0;
            for (std::size_t c = 0; c < C; ++c) {
                const double e = std::exp(scores[base + c * HW] - mx);
                p[base + c * HW] = e;
                z += e;
            }
            for (std::size_t c = 0; c < C; ++c) p[base + c * HW] /= z;
        }
    return p;
}

void require_labels(const Shape& s, std::span<const std::uint8_t> labels, const char* what) {
    if (labels.size() != s[0] * s[2] * s[3]) throw ShapeError(std::string(what) + ": label count does not match score map " + s.str());
    for (auto l : labels)
        if (l >= s[1]) throw ShapeError(std::string(what) + ": label " + std::to_string(l) + " outside class range");
}

}  // namespace

Var softmax_channels(const Var& scores) {
    require_rank(scores, 4, "softmax_channels");
    auto probs = std::make_shared<Grid>(softmax_values(scores.value()));
    const Shape s = scores.shape();
    const std::size_t B = s[0], C = s[1], HW = s[2] * s[3];
    Grid out = *probs;
    return make_result(std::move(out), {scores}, [probs, B, C, HW](Node& self) {
        Grid& gx = grad_of(self, 0);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t i = 0; i < HW; ++i) {
                const std::size_t base = b * C * HW + i;
                double dot = 0.0;
                for (std::size_t c = 0; c < C; ++c) dot += self.grad[base + c * HW] * (*probs)[base + c * HW];
                for (std::size_t c = 0; c < C; ++c)
                    gx[base + c * HW] += (*probs)[base + c * HW] * (self.grad[base + c * HW] - dot);
            }
    });
}

Var weighted_cross_entropy(const Var& scores, std::span<const std::uint8_t> labels, std::span<const double> class_weights) {
    require_rank(scores, 4, "weighted_cross_entropy");
    const Shape s = scores.shape();
    const std::size_t B = s[0], C = s[1], HW = s[2] * s[3];
    require_labels(s, labels, "weighted_cross_entropy");
    if (class_weights.size() != C) throw ShapeError("weighted_cross_entropy: need one weight per class");

    auto probs = std::make_shared<Grid>(softmax_values(scores.value()));
    const double n = static_cast<double>(B * HW);
    double loss = 0.0;
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < HW; ++i) {
            const std::uint8_t y = labels[b * HW + i];
            const double p = (*probs)[b * C * HW + y * HW + i];
            loss -= class_weights[y] * std::log(std::max(p, 1e-300));
        }
    std::vector<std::uint8_t> lab(labels.begin(), labels.end());
    std::vector<double> w(class_weights.begin(), class_weights.end());
    return make_result(Grid::scalar(loss / n), {scores}, [probs, lab = std::move(lab), w = std::move(w), B, C, HW, n](Node& self) {
        Grid& gx = grad_of(self, 0);
        const double up = self.grad[0] / n;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t i = 0; i < HW; ++i) {
                const std::uint8_t y = lab[b * HW + i];
                const double k = up * w[y];
                for (std::size_t c = 0; c < C; ++c) {
                    const std::size_t idx = b * C * HW + c * HW + i;
                    gx[idx] += k * ((*probs)[idx] - (c == y ? 1.0 : 0.0));
                }
            }
    });
}

Var soft_dice_loss(const Var& probs, std::span<const std::uint8_t> labels, double smooth) {
    require_rank(probs, 4, "soft_dice_loss");
    const Shape s = probs.shape();
    const std::size_t B = s[0], C = s[1], HW = s[2] * s[3];
    require_labels(s, labels, "soft_dice_loss");

    std::vector<double> inter(C, 0.0), total(C, 0.0);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < HW; ++i) {
                const double p = probs.value()[b * C * HW + c * HW + i];
                const bool hit = labels[b * HW + i] == c;
                total[c] += p + (hit ? 1.0 : 0.0);
                if (hit) inter[c] += p;
            }
    double dice_sum = 0.0;
    for (std::size_t c = 0; c < C; ++c) dice_sum += (2.0 * inter[c] + smooth) / (total[c] + smooth);
    const double loss = 1.0 - dice_sum / static_cast<double>(C);

    std::vector<std::uint8_t> lab(labels.begin(), labels.end());
    return make_result(Grid::scalar(loss), {probs}, [=, lab = std::move(lab)](Node& self) {
        Grid& gp = grad_of(self, 0);
        const double up = self.grad[0] / static_cast<double>(C);
        for (std::size_t c = 0; c < C; ++c) {
            const double den = total[c] + smooth;
            const double num = 2.0 * inter[c] + smooth;
            const double d_hit = -up * (2.0 * den - num) / (den * den);
            const double d_miss = up * num / (den * den);
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t i = 0; i < HW; ++i)
                    gp[b * C * HW + c * HW + i] += (lab[b * HW + i] == c) ? d_hit : d_miss;
        }
    });
}

}  // namespace difforge::ops
