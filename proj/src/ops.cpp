#include "qsr/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>

namespace qsr {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using CMapM = Eigen::Map<const MatRM>;

// --- convolution ------------------------------------------------------------

namespace {

struct ConvDims {
    int n, c, h, w;
    int cout, cg, kh, kw;  // cg = c / groups
    int stride, ph, pw, groups;
    int ho, wo;
    int cout_g;  // cout / groups
};

// Fills cols [cg*kh*kw x ho*wo] for one (sample, group) from src [C,H,W] data.
void im2col(const double* src, const ConvDims& d, int group, double* cols) {
    const int hw = d.h * d.w;
    const int howo = d.ho * d.wo;
    for (int c = 0; c < d.cg; ++c) {
        const double* chan = src + (group * d.cg + c) * hw;
        for (int ky = 0; ky < d.kh; ++ky) {
            for (int kx = 0; kx < d.kw; ++kx) {
                double* row = cols + ((c * d.kh + ky) * d.kw + kx) * howo;
                for (int oy = 0; oy < d.ho; ++oy) {
                    const int iy = oy * d.stride - d.ph + ky;
                    double* out_row = row + oy * d.wo;
                    if (iy < 0 || iy >= d.h) {
                        std::memset(out_row, 0, sizeof(double) * static_cast<std::size_t>(d.wo));
                        continue;
                    }
                    const double* in_row = chan + iy * d.w;
                    if (d.stride == 1) {
                        // valid ox range for ix = ox - pw + kx in [0, w)
                        int lo = std::max(0, d.pw - kx);
                        int hi = std::min(d.wo, d.w + d.pw - kx);
                        if (lo > 0) std::memset(out_row, 0, sizeof(double) * static_cast<std::size_t>(lo));
                        if (hi < d.wo)
                            std::memset(out_row + hi, 0,
                                        sizeof(double) * static_cast<std::size_t>(d.wo - hi));
                        if (hi > lo)
                            std::memcpy(out_row + lo, in_row + lo - d.pw + kx,
                                        sizeof(double) * static_cast<std::size_t>(hi - lo));
                    } else {
                        for (int ox = 0; ox < d.wo; ++ox) {
                            const int ix = ox * d.stride - d.pw + kx;
                            out_row[ox] = (ix >= 0 && ix < d.w) ? in_row[ix] : 0.0;
                        }
                    }
                }
            }
        }
    }
}

// Scatter-add of cols gradients back into dsrc [C,H,W] for one (sample, group).
void col2im_add(const double* cols, const ConvDims& d, int group, double* dsrc) {
    const int hw = d.h * d.w;
    const int howo = d.ho * d.wo;
    for (int c = 0; c < d.cg; ++c) {
        double* chan = dsrc + (group * d.cg + c) * hw;
        for (int ky = 0; ky < d.kh; ++ky) {
            for (int kx = 0; kx < d.kw; ++kx) {
                const double* row = cols + ((c * d.kh + ky) * d.kw + kx) * howo;
                for (int oy = 0; oy < d.ho; ++oy) {
                    const int iy = oy * d.stride - d.ph + ky;
                    if (iy < 0 || iy >= d.h) continue;
                    double* out_row = chan + iy * d.w;
                    const double* in_row = row + oy * d.wo;
                    for (int ox = 0; ox < d.wo; ++ox) {
                        const int ix = ox * d.stride - d.pw + kx;
                        if (ix >= 0 && ix < d.w) out_row[ix] += in_row[ox];
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride,
              int pad_h, int pad_w, int groups) {
    if (input.ndim() != 4) throw ContractError("conv2d: input must be NCHW, got " + shape_str(input.shape()));
    if (kernel.ndim() != 4) throw ContractError("conv2d: kernel must be 4-D, got " + shape_str(kernel.shape()));
    ConvDims d;
    d.n = input.dim(0);
    d.c = input.dim(1);
    d.h = input.dim(2);
    d.w = input.dim(3);
    d.cout = kernel.dim(0);
    d.kh = kernel.dim(2);
    d.kw = kernel.dim(3);
    d.stride = stride;
    d.ph = pad_h;
    d.pw = pad_w;
    d.groups = groups;
    if (groups <= 0 || d.c % groups != 0 || d.cout % groups != 0)
        throw ConfigError("conv2d: groups=" + std::to_string(groups) + " must divide channels " +
                          std::to_string(d.c) + " and " + std::to_string(d.cout));
    d.cg = d.c / groups;
    d.cout_g = d.cout / groups;
    if (kernel.dim(1) != d.cg)
        throw ContractError("conv2d: kernel Cin " + std::to_string(kernel.dim(1)) +
                            " != input channels/groups " + std::to_string(d.cg));
    if (bias.defined() && bias.numel() != d.cout)
        throw ContractError("conv2d: bias length " + std::to_string(bias.numel()) +
                            " != output channels " + std::to_string(d.cout));
    d.ho = (d.h + 2 * pad_h - d.kh) / stride + 1;
    d.wo = (d.w + 2 * pad_w - d.kw) / stride + 1;
    if (d.ho <= 0 || d.wo <= 0)
        throw ContractError("conv2d: empty output for input " + shape_str(input.shape()));

    const int howo = d.ho * d.wo;
    const int krows = d.cg * d.kh * d.kw;

    std::vector<Tensor> parents{input, kernel};
    if (bias.defined()) parents.push_back(bias);
    Tensor out = make_node(
        {d.n, d.cout, d.ho, d.wo}, parents, [d](detail::TensorImpl& self) {
            auto& in = *self.parents[0];
            auto& ker = *self.parents[1];
            detail::TensorImpl* bi = self.parents.size() > 2 ? self.parents[2].get() : nullptr;
            const int howo2 = d.ho * d.wo;
            const int krows2 = d.cg * d.kh * d.kw;
            std::vector<double> cols(static_cast<std::size_t>(krows2) * howo2);
            for (int n = 0; n < d.n; ++n) {
                const double* src = in.data.data() + static_cast<std::size_t>(n) * d.c * d.h * d.w;
                double* dsrc = in.requires_grad
                                   ? in.grad.data() + static_cast<std::size_t>(n) * d.c * d.h * d.w
                                   : nullptr;
                for (int g = 0; g < d.groups; ++g) {
                    CMapM gout(self.grad.data() +
                                   (static_cast<std::size_t>(n) * d.cout + g * d.cout_g) * howo2,
                               d.cout_g, howo2);
                    CMapM wmat(ker.data.data() + static_cast<std::size_t>(g) * d.cout_g * krows2,
                               d.cout_g, krows2);
                    if (ker.requires_grad || in.requires_grad)
                        im2col(src, d, g, cols.data());
                    if (ker.requires_grad) {
                        MapM dw(ker.grad.data() + static_cast<std::size_t>(g) * d.cout_g * krows2,
                                d.cout_g, krows2);
                        CMapM cmat(cols.data(), krows2, howo2);
                        dw.noalias() += gout * cmat.transpose();
                    }
                    if (in.requires_grad) {
                        std::vector<double> dcols(static_cast<std::size_t>(krows2) * howo2);
                        MapM dc(dcols.data(), krows2, howo2);
                        dc.noalias() = wmat.transpose() * gout;
                        col2im_add(dcols.data(), d, g, dsrc);
                    }
                    if (bi && bi->requires_grad) {
                        for (int oc = 0; oc < d.cout_g; ++oc)
                            bi->grad[static_cast<std::size_t>(g * d.cout_g + oc)] += gout.row(oc).sum();
                    }
                }
            }
        });

    // forward
    {
        std::vector<double> cols(static_cast<std::size_t>(krows) * howo);
        const double* src0 = input.data();
        double* dst0 = out.data();
        for (int n = 0; n < d.n; ++n) {
            const double* src = src0 + static_cast<std::size_t>(n) * d.c * d.h * d.w;
            for (int g = 0; g < groups; ++g) {
                im2col(src, d, g, cols.data());
                CMapM wmat(kernel.data() + static_cast<std::size_t>(g) * d.cout_g * krows, d.cout_g,
                           krows);
                CMapM cmat(cols.data(), krows, howo);
                MapM omat(dst0 + (static_cast<std::size_t>(n) * d.cout + g * d.cout_g) * howo,
                          d.cout_g, howo);
                omat.noalias() = wmat * cmat;
                if (bias.defined()) {
                    for (int oc = 0; oc < d.cout_g; ++oc)
                        omat.row(oc).array() += bias.data()[g * d.cout_g + oc];
                }
            }
        }
    }
    return out;
}

// --- pixel shuffle ----------------------------------------------------------

Tensor pixel_shuffle(const Tensor& x, int r) {
    if (x.ndim() != 4) throw ContractError("pixel_shuffle: input must be NCHW");
    const int n = x.dim(0), c_in = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (r <= 0 || c_in % (r * r) != 0)
        throw ConfigError("pixel_shuffle: channels " + std::to_string(c_in) +
                          " not divisible by r^2=" + std::to_string(r * r));
    const int c = c_in / (r * r);
    Tensor out = make_node({n, c, h * r, w * r}, {x}, [n, c_in, h, w, r, c](detail::TensorImpl& self) {
        auto& in = *self.parents[0];
        if (!in.requires_grad) return;
        const int hr = h * r, wr = w * r;
        for (int ni = 0; ni < n; ++ni)
            for (int ci = 0; ci < c; ++ci)
                for (int dy = 0; dy < r; ++dy)
                    for (int dx = 0; dx < r; ++dx) {
                        const int src_c = ci * r * r + dy * r + dx;
                        for (int y = 0; y < h; ++y) {
                            const double* grow =
                                self.grad.data() +
                                ((static_cast<std::size_t>(ni) * c + ci) * hr + (y * r + dy)) * wr + dx;
                            double* irow = in.grad.data() +
                                           ((static_cast<std::size_t>(ni) * c_in + src_c) * h + y) * w;
                            for (int xx = 0; xx < w; ++xx) irow[xx] += grow[xx * r];
                        }
                    }
    });
    const int hr = h * r, wr = w * r;
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci)
            for (int dy = 0; dy < r; ++dy)
                for (int dx = 0; dx < r; ++dx) {
                    const int src_c = ci * r * r + dy * r + dx;
                    for (int y = 0; y < h; ++y) {
                        const double* irow =
                            x.data() + ((static_cast<std::size_t>(ni) * c_in + src_c) * h + y) * w;
                        double* orow = out.data() +
                                       ((static_cast<std::size_t>(ni) * c + ci) * hr + (y * r + dy)) * wr +
                                       dx;
                        for (int xx = 0; xx < w; ++xx) orow[xx * r] = irow[xx];
                    }
                }
    return out;
}

Tensor pixel_unshuffle(const Tensor& x, int r) {
    if (x.ndim() != 4) throw ContractError("pixel_unshuffle: input must be NCHW");
    const int n = x.dim(0), c = x.dim(1), hr = x.dim(2), wr = x.dim(3);
    if (r <= 0 || hr % r != 0 || wr % r != 0)
        throw ConfigError("pixel_unshuffle: spatial dims not divisible by r");
    const int h = hr / r, w = wr / r, c_out = c * r * r;
    Tensor out = make_node({n, c_out, h, w}, {x}, [n, c, h, w, r, hr, wr](detail::TensorImpl& self) {
        auto& in = *self.parents[0];
        if (!in.requires_grad) return;
        for (int ni = 0; ni < n; ++ni)
            for (int ci = 0; ci < c; ++ci)
                for (int dy = 0; dy < r; ++dy)
                    for (int dx = 0; dx < r; ++dx) {
                        const int dst_c = ci * r * r + dy * r + dx;
                        for (int y = 0; y < h; ++y) {
                            const double* grow =
                                self.grad.data() +
                                ((static_cast<std::size_t>(ni) * (c * r * r) + dst_c) * h + y) * w;
                            double* irow = in.grad.data() +
                                           ((static_cast<std::size_t>(ni) * c + ci) * hr + (y * r + dy)) * wr +
                                           dx;
                            for (int xx = 0; xx < w; ++xx) irow[xx * r] += grow[xx];
                        }
                    }
    });
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci)
            for (int dy = 0; dy < r; ++dy)
                for (int dx = 0; dx < r; ++dx) {
                    const int dst_c = ci * r * r + dy * r + dx;
                    for (int y = 0; y < h; ++y) {
                        const double* irow =
                            x.data() + ((static_cast<std::size_t>(ni) * c + ci) * hr + (y * r + dy)) * wr + dx;
                        double* orow =
                            out.data() + ((static_cast<std::size_t>(ni) * c_out + dst_c) * h + y) * w;
                        for (int xx = 0; xx < w; ++xx) orow[xx] = irow[xx * r];
                    }
                }
    return out;
}

// --- binary elementwise with limited broadcasting ----------------------------

namespace {

enum class Bcast { Same, ScalarLeft, ScalarRight, ChannelLeft, ChannelRight };

Bcast classify(const Tensor& a, const Tensor& b, const char* opname) {
    if (a.shape() == b.shape()) return Bcast::Same;
    if (a.numel() == 1) return Bcast::ScalarLeft;
    if (b.numel() == 1) return Bcast::ScalarRight;
    if (a.ndim() == 1 && b.ndim() == 4 && a.dim(0) == b.dim(1)) return Bcast::ChannelLeft;
    if (b.ndim() == 1 && a.ndim() == 4 && b.dim(0) == a.dim(1)) return Bcast::ChannelRight;
    throw ContractError(std::string(opname) + ": incompatible shapes " + shape_str(a.shape()) +
                        " vs " + shape_str(b.shape()));
}

// Expands the smaller operand's value for flat index i of the full tensor.
struct BcastIndex {
    Bcast mode;
    int c = 0, hw = 0;
    // index into the small operand for flat position i in the big one
    inline std::size_t small_index(std::size_t i) const {
        if (mode == Bcast::ScalarLeft || mode == Bcast::ScalarRight) return 0;
        return (i / static_cast<std::size_t>(hw)) % static_cast<std::size_t>(c);
    }
};

}  // namespace

static Tensor binary_op(const Tensor& a, const Tensor& b, const char* name,
                        double (*fwd)(double, double),
                        void (*bwd)(double g, double av, double bv, double& da, double& db)) {
    Bcast mode = classify(a, b, name);
    const Tensor& big = (mode == Bcast::ScalarLeft || mode == Bcast::ChannelLeft) ? b : a;
    BcastIndex bi{mode, 0, 0};
    if (mode == Bcast::ChannelLeft || mode == Bcast::ChannelRight) {
        bi.c = big.dim(1);
        bi.hw = big.dim(2) * big.dim(3);
    }
    const bool a_small = (mode == Bcast::ScalarLeft || mode == Bcast::ChannelLeft);
    const bool b_small = (mode == Bcast::ScalarRight || mode == Bcast::ChannelRight);

    Tensor out =
        make_node(big.shape(), {a, b}, [bi, a_small, b_small, bwd](detail::TensorImpl& self) {
            auto& pa = *self.parents[0];
            auto& pb = *self.parents[1];
            const std::size_t n = self.data.size();
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t ia = a_small ? bi.small_index(i) : i;
                const std::size_t ib = b_small ? bi.small_index(i) : i;
                double da = 0.0, db = 0.0;
                bwd(self.grad[i], pa.data[ia], pb.data[ib], da, db);
                if (pa.requires_grad) pa.grad[ia] += da;
                if (pb.requires_grad) pb.grad[ib] += db;
            }
        });
    const std::size_t n = static_cast<std::size_t>(out.numel());
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t ia = a_small ? bi.small_index(i) : i;
        const std::size_t ib = b_small ? bi.small_index(i) : i;
        po[i] = fwd(pa[ia], pb[ib]);
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "add", [](double x, double y) { return x + y; },
        [](double g, double, double, double& da, double& db) {
            da = g;
            db = g;
        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "sub", [](double x, double y) { return x - y; },
        [](double g, double, double, double& da, double& db) {
            da = g;
            db = -g;
        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "mul", [](double x, double y) { return x * y; },
        [](double g, double av, double bv, double& da, double& db) {
            da = g * bv;
            db = g * av;
        });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "div", [](double x, double y) { return x / y; },
        [](double g, double av, double bv, double& da, double& db) {
            da = g / bv;
            db = -g * av / (bv * bv);
        });
}

// --- unary elementwise --------------------------------------------------------

static Tensor unary_op(const Tensor& x, double (*fwd)(double),
                       double (*dfdx)(double xv, double yv)) {
    Tensor out = make_node(x.shape(), {x}, [dfdx](detail::TensorImpl& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        for (std::size_t i = 0; i < self.data.size(); ++i)
            p.grad[i] += self.grad[i] * dfdx(p.data[i], self.data[i]);
    });
    const std::size_t n = static_cast<std::size_t>(x.numel());
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = fwd(x.data()[i]);
    return out;
}

Tensor scalar_mul(const Tensor& x, double c) {
    Tensor out = make_node(x.shape(), {x}, [c](detail::TensorImpl& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        for (std::size_t i = 0; i < self.data.size(); ++i) p.grad[i] += self.grad[i] * c;
    });
    for (long i = 0; i < x.numel(); ++i) out.data()[i] = x.data()[i] * c;
    return out;
}

Tensor scalar_add(const Tensor& x, double c) {
    Tensor out = make_node(x.shape(), {x}, [](detail::TensorImpl& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        for (std::size_t i = 0; i < self.data.size(); ++i) p.grad[i] += self.grad[i];
    });
    for (long i = 0; i < x.numel(); ++i) out.data()[i] = x.data()[i] + c;
    return out;
}

Tensor relu(const Tensor& x) {
    return unary_op(
        x, [](double v) { return v > 0.0 ? v : 0.0; },
        [](double xv, double) { return xv > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& x, double slope) {
    Tensor out = make_node(x.shape(), {x}, [slope](detail::TensorImpl& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        for (std::size_t i = 0; i < self.data.size(); ++i)
            p.grad[i] += self.grad[i] * (p.data[i] >= 0.0 ? 1.0 : slope);
    });
    for (long i = 0; i < x.numel(); ++i) {
        double v = x.data()[i];
        out.data()[i] = v >= 0.0 ? v : slope * v;
    }
    return out;
}

Tensor abs(const Tensor& x) {
    return unary_op(
        x, [](double v) { return std::fabs(v); },
        [](double xv, double) { return xv > 0.0 ? 1.0 : (xv < 0.0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor& x) {
    return unary_op(
        x, [](double v) { return v * v; }, [](double xv, double) { return 2.0 * xv; });
}

Tensor log(const Tensor& x) {
    return unary_op(
        x, [](double v) { return std::log(v); }, [](double xv, double) { return 1.0 / xv; });
}

Tensor sqrt(const Tensor& x) {
    return unary_op(
        x, [](double v) { return std::sqrt(v); },
        [](double, double yv) { return 0.5 / std::max(yv, 1e-12); });
}

Tensor clamp_min(const Tensor& x, double lo) {
    Tensor out = make_node(x.shape(), {x}, [lo](detail::TensorImpl& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        for (std::size_t i = 0; i < self.data.size(); ++i)
            if (p.data[i] > lo) p.grad[i] += self.grad[i];
    });
    for (long i = 0; i < x.numel(); ++i) out.data()[i] = std::max(x.data()[i], lo);
    return out;
}

// --- reductions ----------------------------------------------------------------

Tensor sum(const Tensor& x) {
    Tensor out = make_node({1}, {x}, [](detail::TensorImpl& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        const double g = self.grad[0];
        for (std::size_t i = 0; i < p.data.size(); ++i) p.grad[i] += g;
    });
    double acc = 0.0;
    for (long i = 0; i < x.numel(); ++i) acc += x.data()[i];
    out.data()[0] = acc;
    return out;
}

Tensor mean(const Tensor& x) {
    const double inv = 1.0 / static_cast<double>(x.numel());
    Tensor out = make_node({1}, {x}, [inv](detail::TensorImpl& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        const double g = self.grad[0] * inv;
        for (std::size_t i = 0; i < p.data.size(); ++i) p.grad[i] += g;
    });
    double acc = 0.0;
    for (long i = 0; i < x.numel(); ++i) acc += x.data()[i];
    out.data()[0] = acc * inv;
    return out;
}

// --- vector ops -----------------------------------------------------------------

Tensor softmax(const Tensor& v) {
    if (v.ndim() != 1) throw ContractError("softmax: expects a 1-D vector");
    const int n = v.dim(0);
    Tensor out = make_node({n}, {v}, [n](detail::TensorImpl& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        double dot = 0.0;
        for (int i = 0; i < n; ++i) dot += self.grad[i] * self.data[i];
        for (int i = 0; i < n; ++i) p.grad[i] += self.data[i] * (self.grad[i] - dot);
    });
    double m = v.data()[0];
    for (int i = 1; i < n; ++i) m = std::max(m, v.data()[i]);
    double z = 0.0;
    for (int i = 0; i < n; ++i) {
        out.data()[i] = std::exp(v.data()[i] - m);
        z += out.data()[i];
    }
    for (int i = 0; i < n; ++i) out.data()[i] /= z;
    return out;
}

Tensor select(const Tensor& v, int i) {
    if (v.ndim() != 1 || i < 0 || i >= v.dim(0))
        throw ContractError("select: index " + std::to_string(i) + " out of range for " +
                            shape_str(v.shape()));
    Tensor out = make_node({1}, {v}, [i](detail::TensorImpl& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.grad[static_cast<std::size_t>(i)] += self.grad[0];
    });
    out.data()[0] = v.data()[i];
    return out;
}

Tensor weighted_sum(const Tensor& v, const std::vector<double>& w) {
    if (v.ndim() != 1 || static_cast<std::size_t>(v.dim(0)) != w.size())
        throw ContractError("weighted_sum: weight count does not match vector length");
    Tensor out = make_node({1}, {v}, [w](detail::TensorImpl& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        for (std::size_t i = 0; i < w.size(); ++i) p.grad[i] += self.grad[0] * w[i];
    });
    double acc = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) acc += w[i] * v.data()[i];
    out.data()[0] = acc;
    return out;
}

Tensor entropy(const Tensor& p) {
    if (p.ndim() != 1) throw ContractError("entropy: expects a 1-D probability vector");
    const int n = p.dim(0);
    constexpr double kTiny = 1e-12;
    Tensor out = make_node({1}, {p}, [n](detail::TensorImpl& self) {
        auto& pp = *self.parents[0];
        if (!pp.requires_grad) return;
        for (int i = 0; i < n; ++i) {
            const double v = pp.data[i];
            if (v >= kTiny) pp.grad[i] += self.grad[0] * (-(std::log(v) + 1.0));
        }
    });
    double h = 0.0;
    for (int i = 0; i < n; ++i) {
        const double v = p.data()[i];
        if (v >= kTiny) h -= v * std::log(v);
    }
    out.data()[0] = h;
    return out;
}

Tensor std_over_channels(const Tensor& x) {
    if (x.ndim() != 4) throw ContractError("std_over_channels: input must be NCHW");
    const int n = x.dim(0);
    const long m = x.numel() / n;
    Tensor out = make_node({n}, {x}, [n, m](detail::TensorImpl& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        for (int ni = 0; ni < n; ++ni) {
            const double* xd = p.data.data() + static_cast<std::size_t>(ni) * m;
            double* gd = p.grad.data() + static_cast<std::size_t>(ni) * m;
            double mu = 0.0;
            for (long i = 0; i < m; ++i) mu += xd[i];
            mu /= static_cast<double>(m);
            const double sigma = std::max(self.data[static_cast<std::size_t>(ni)], 1e-12);
            const double g = self.grad[static_cast<std::size_t>(ni)] / (static_cast<double>(m) * sigma);
            for (long i = 0; i < m; ++i) gd[i] += g * (xd[i] - mu);
        }
    });
    for (int ni = 0; ni < n; ++ni) {
        const double* xd = x.data() + static_cast<std::size_t>(ni) * m;
        double mu = 0.0;
        for (long i = 0; i < m; ++i) mu += xd[i];
        mu /= static_cast<double>(m);
        double var = 0.0;
        for (long i = 0; i < m; ++i) {
            const double dlt = xd[i] - mu;
            var += dlt * dlt;
        }
        out.data()[ni] = std::sqrt(var / static_cast<double>(m));
    }
    return out;
}

Tensor mul_per_sample(const Tensor& x, const Tensor& s) {
    if (x.ndim() != 4 || s.ndim() != 1 || s.dim(0) != x.dim(0))
        throw ContractError("mul_per_sample: expects [N,C,H,W] and [N]");
    const int n = x.dim(0);
    const long m = x.numel() / n;
    Tensor out = make_node(x.shape(), {x, s}, [n, m](detail::TensorImpl& self) {
        auto& px = *self.parents[0];
        auto& ps = *self.parents[1];
        for (int ni = 0; ni < n; ++ni) {
            const std::size_t off = static_cast<std::size_t>(ni) * m;
            const double sv = ps.data[static_cast<std::size_t>(ni)];
            double acc = 0.0;
            for (long i = 0; i < m; ++i) {
                const double g = self.grad[off + i];
                if (px.requires_grad) px.grad[off + i] += g * sv;
                acc += g * px.data[off + i];
            }
            if (ps.requires_grad) ps.grad[static_cast<std::size_t>(ni)] += acc;
        }
    });
    for (int ni = 0; ni < n; ++ni) {
        const std::size_t off = static_cast<std::size_t>(ni) * m;
        const double sv = s.data()[ni];
        for (long i = 0; i < m; ++i) out.data()[off + i] = x.data()[off + i] * sv;
    }
    return out;
}

// --- batch norm -------------------------------------------------------------------

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  std::vector<double>& running_mean, std::vector<double>& running_var,
                  bool training, bool update_running, double momentum, double eps) {
    if (x.ndim() != 4) throw ContractError("batch_norm: input must be NCHW");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (gamma.numel() != c || beta.numel() != c ||
        running_mean.size() != static_cast<std::size_t>(c) ||
        running_var.size() != static_cast<std::size_t>(c))
        throw ContractError("batch_norm: per-channel parameter length mismatch");
    const long m = static_cast<long>(n) * h * w;

    std::vector<double> mu(c), var(c);
    if (training) {
        for (int ci = 0; ci < c; ++ci) {
            double acc = 0.0;
            for (int ni = 0; ni < n; ++ni) {
                const double* px = x.data() + ((static_cast<std::size_t>(ni) * c + ci) * h) * w;
                for (long i = 0; i < static_cast<long>(h) * w; ++i) acc += px[i];
            }
            mu[ci] = acc / static_cast<double>(m);
            double vacc = 0.0;
            for (int ni = 0; ni < n; ++ni) {
                const double* px = x.data() + ((static_cast<std::size_t>(ni) * c + ci) * h) * w;
                for (long i = 0; i < static_cast<long>(h) * w; ++i) {
                    const double dlt = px[i] - mu[ci];
                    vacc += dlt * dlt;
                }
            }
            var[ci] = vacc / static_cast<double>(m);
        }
        if (update_running) {
            const double unbias = m > 1 ? static_cast<double>(m) / static_cast<double>(m - 1) : 1.0;
            for (int ci = 0; ci < c; ++ci) {
                running_mean[ci] = (1.0 - momentum) * running_mean[ci] + momentum * mu[ci];
                running_var[ci] = (1.0 - momentum) * running_var[ci] + momentum * var[ci] * unbias;
            }
        }
    } else {
        for (int ci = 0; ci < c; ++ci) {
            mu[ci] = running_mean[ci];
            var[ci] = running_var[ci];
        }
    }

    std::vector<double> inv(c);
    for (int ci = 0; ci < c; ++ci) inv[ci] = 1.0 / std::sqrt(var[ci] + eps);

    Tensor out = make_node(
        x.shape(), {x, gamma, beta},
        [n, c, h, w, m, mu, inv, training](detail::TensorImpl& self) {
            auto& px = *self.parents[0];
            auto& pg = *self.parents[1];
            auto& pb = *self.parents[2];
            const long hw = static_cast<long>(h) * w;
            for (int ci = 0; ci < c; ++ci) {
                // channel-wise reductions of g and g*xhat
                double gsum = 0.0, gxsum = 0.0;
                for (int ni = 0; ni < n; ++ni) {
                    const std::size_t off = (static_cast<std::size_t>(ni) * c + ci) * hw;
                    for (long i = 0; i < hw; ++i) {
                        const double g = self.grad[off + i];
                        const double xhat = (px.data[off + i] - mu[ci]) * inv[ci];
                        gsum += g;
                        gxsum += g * xhat;
                    }
                }
                if (pg.requires_grad) pg.grad[ci] += gxsum;
                if (pb.requires_grad) pb.grad[ci] += gsum;
                if (!px.requires_grad) continue;
                const double gm = pg.data[ci];
                if (training) {
                    const double im = 1.0 / static_cast<double>(m);
                    for (int ni = 0; ni < n; ++ni) {
                        const std::size_t off = (static_cast<std::size_t>(ni) * c + ci) * hw;
                        for (long i = 0; i < hw; ++i) {
                            const double g = self.grad[off + i];
                            const double xhat = (px.data[off + i] - mu[ci]) * inv[ci];
                            px.grad[off + i] += gm * inv[ci] * (g - gsum * im - xhat * gxsum * im);
                        }
                    }
                } else {
                    for (int ni = 0; ni < n; ++ni) {
                        const std::size_t off = (static_cast<std::size_t>(ni) * c + ci) * hw;
                        for (long i = 0; i < hw; ++i)
                            px.grad[off + i] += self.grad[off + i] * gm * inv[ci];
                    }
                }
            }
        });

    const long hw = static_cast<long>(h) * w;
    for (int ci = 0; ci < c; ++ci) {
        const double g = gamma.data()[ci], b = beta.data()[ci];
        for (int ni = 0; ni < n; ++ni) {
            const std::size_t off = (static_cast<std::size_t>(ni) * c + ci) * hw;
            for (long i = 0; i < hw; ++i)
                out.data()[off + i] = (x.data()[off + i] - mu[ci]) * inv[ci] * g + b;
        }
    }
    return out;
}

}  // namespace qsr
