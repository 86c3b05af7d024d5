#include "icvp/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace icvp {

namespace {

bool track(std::initializer_list<const Tensor*> ins) {
    if (!autograd::enabled()) return false;
    for (const Tensor* t : ins)
        if (t->defined() && t->requires_grad()) return true;
    return false;
}

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

// Valid kernel-tap range [lo,hi) for one output position: taps k with
// 0 <= base + k*dil < extent.
inline void tap_range(int base, int dil, int extent, int k, int& lo, int& hi) {
    lo = base >= 0 ? 0 : (-base + dil - 1) / dil;
    int room = extent - base; // need k*dil < room
    hi = room <= 0 ? 0 : std::min(k, (room + dil - 1) / dil);
    if (lo > hi) lo = hi;
}

} // namespace

// ---------------------------------------------------------------- conv2d

namespace {

void conv2d_forward_into(float* out, const float* x, const float* w, const float* b,
                         int Ci, int H, int W, int Co, int K, int s, int dil, int Ho, int Wo) {
    const int p = same_pad(K, dil);
#pragma omp parallel for collapse(2) schedule(static) if (static_cast<long>(Co) * Ho * Wo >= 2048)
    for (int co = 0; co < Co; ++co) {
        for (int oy = 0; oy < Ho; ++oy) {
            const int by = oy * s - p;
            int ky_lo, ky_hi;
            tap_range(by, dil, H, K, ky_lo, ky_hi);
            float* orow = out + (static_cast<std::size_t>(co) * Ho + oy) * Wo;
            for (int ox = 0; ox < Wo; ++ox) {
                const int bx = ox * s - p;
                int kx_lo, kx_hi;
                tap_range(bx, dil, W, K, kx_lo, kx_hi);
                double acc = b ? b[co] : 0.0;
                for (int ci = 0; ci < Ci; ++ci) {
                    const float* xc = x + static_cast<std::size_t>(ci) * H * W;
                    const float* wc = w + ((static_cast<std::size_t>(co) * Ci + ci) * K) * K;
                    for (int ky = ky_lo; ky < ky_hi; ++ky) {
                        const float* xrow = xc + static_cast<std::size_t>(by + ky * dil) * W + bx;
                        const float* wrow = wc + static_cast<std::size_t>(ky) * K;
                        for (int kx = kx_lo; kx < kx_hi; ++kx)
                            acc += static_cast<double>(wrow[kx]) * xrow[kx * dil];
                    }
                }
                orow[ox] = static_cast<float>(acc);
            }
        }
    }
}

void conv2d_backward(Tensor x, Tensor w, Tensor b, Tensor out, int s, int dil) {
    if (!out.has_grad()) return;
    const int Ci = x.dim(0), H = x.dim(1), W = x.dim(2);
    const int Co = w.dim(0), K = w.dim(2);
    const int Ho = out.dim(1), Wo = out.dim(2);
    const int p = same_pad(K, dil);
    const float* g = out.grad();
    if (x.requires_grad()) {
        x.ensure_grad();
        float* dx = x.grad();
        const float* wd = w.data();
#pragma omp parallel for collapse(2) schedule(static) if (static_cast<long>(Ci) * H * W >= 2048)
        for (int ci = 0; ci < Ci; ++ci) {
            for (int iy = 0; iy < H; ++iy) {
                for (int ix = 0; ix < W; ++ix) {
                    double acc = 0.0;
                    for (int ky = 0; ky < K; ++ky) {
                        const int ty = iy + p - ky * dil;
                        if (ty < 0 || ty % s) continue;
                        const int oy = ty / s;
                        if (oy >= Ho) continue;
                        for (int kx = 0; kx < K; ++kx) {
                            const int tx = ix + p - kx * dil;
                            if (tx < 0 || tx % s) continue;
                            const int ox = tx / s;
                            if (ox >= Wo) continue;
                            const float* grow = g + (static_cast<std::size_t>(0) * Ho + oy) * Wo + ox;
                            for (int co = 0; co < Co; ++co)
                                acc += static_cast<double>(wd[((static_cast<std::size_t>(co) * Ci + ci) * K + ky) * K + kx]) *
                                       grow[static_cast<std::size_t>(co) * Ho * Wo];
                        }
                    }
                    dx[(static_cast<std::size_t>(ci) * H + iy) * W + ix] += static_cast<float>(acc);
                }
            }
        }
    }
    if (w.requires_grad()) {
        w.ensure_grad();
        float* dw = w.grad();
        const float* xd = x.data();
#pragma omp parallel for collapse(2) schedule(static) if (static_cast<long>(Co) * Ci >= 8)
        for (int co = 0; co < Co; ++co) {
            for (int ci = 0; ci < Ci; ++ci) {
                const float* gc = g + static_cast<std::size_t>(co) * Ho * Wo;
                const float* xc = xd + static_cast<std::size_t>(ci) * H * W;
                for (int ky = 0; ky < K; ++ky) {
                    for (int kx = 0; kx < K; ++kx) {
                        double acc = 0.0;
                        for (int oy = 0; oy < Ho; ++oy) {
                            const int iy = oy * s - p + ky * dil;
                            if (iy < 0 || iy >= H) continue;
                            const float* xrow = xc + static_cast<std::size_t>(iy) * W;
                            const float* grow = gc + static_cast<std::size_t>(oy) * Wo;
                            for (int ox = 0; ox < Wo; ++ox) {
                                const int ix = ox * s - p + kx * dil;
                                if (ix < 0 || ix >= W) continue;
                                acc += static_cast<double>(grow[ox]) * xrow[ix];
                            }
                        }
                        dw[((static_cast<std::size_t>(co) * Ci + ci) * K + ky) * K + kx] += static_cast<float>(acc);
                    }
                }
            }
        }
    }
    if (b.defined() && b.requires_grad()) {
        b.ensure_grad();
        float* db = b.grad();
        for (int co = 0; co < Co; ++co) {
            double acc = 0.0;
            const float* gc = g + static_cast<std::size_t>(co) * Ho * Wo;
            for (long i = 0; i < static_cast<long>(Ho) * Wo; ++i) acc += gc[i];
            db[co] += static_cast<float>(acc);
        }
    }
}

} // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int dilation) {
    require(x.ndim() == 3, "conv2d: input must be [C,H,W], got " + shape_str(x.shape()));
    require(w.ndim() == 4, "conv2d: weight must be [Co,Ci,k,k], got " + shape_str(w.shape()));
    require(w.dim(2) == w.dim(3) && w.dim(2) % 2 == 1, "conv2d: kernel must be square and odd");
    require(stride >= 1 && dilation >= 1, "conv2d: stride and dilation must be >= 1");
    require(x.dim(0) == w.dim(1), "conv2d: channel mismatch, input " + shape_str(x.shape()) +
                                      " vs weight " + shape_str(w.shape()));
    require(!b.defined() || (b.ndim() == 1 && b.dim(0) == w.dim(0)), "conv2d: bias length mismatch");
    const int K = w.dim(2);
    const int Ho = conv_out_extent(x.dim(1), K, stride, dilation);
    const int Wo = conv_out_extent(x.dim(2), K, stride, dilation);
    require(Ho > 0 && Wo > 0, "conv2d: non-positive output extent for input " + shape_str(x.shape()));
    Tensor out = Tensor::zeros({w.dim(0), Ho, Wo});
    conv2d_forward_into(out.data(), x.data(), w.data(), b.defined() ? b.data() : nullptr,
                        x.dim(0), x.dim(1), x.dim(2), w.dim(0), K, stride, dilation, Ho, Wo);
    if (track({&x, &w, &b})) {
        out.set_requires_grad(true);
        Tensor xc = x, wc = w, bc = b, oc = out;
        autograd::record([xc, wc, bc, oc, stride, dilation]() mutable {
            conv2d_backward(xc, wc, bc, oc, stride, dilation);
        });
    }
    return out;
}

// ---------------------------------------------------------------- conv3d

namespace {

void conv3d_backward(Tensor x, Tensor w, Tensor b, Tensor out,
                     std::array<int, 3> s, std::array<int, 3> dil) {
    if (!out.has_grad()) return;
    const int Ci = x.dim(0), D = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Co = w.dim(0), Kd = w.dim(2), Kh = w.dim(3), Kw = w.dim(4);
    const int Do = out.dim(1), Ho = out.dim(2), Wo = out.dim(3);
    const int pd = same_pad(Kd, dil[0]), ph = same_pad(Kh, dil[1]), pw = same_pad(Kw, dil[2]);
    const float* g = out.grad();
    const std::size_t ovol = static_cast<std::size_t>(Do) * Ho * Wo;
    if (x.requires_grad()) {
        x.ensure_grad();
        float* dx = x.grad();
        const float* wd = w.data();
#pragma omp parallel for collapse(2) schedule(static) if (static_cast<long>(Ci) * D * H * W >= 2048)
        for (int ci = 0; ci < Ci; ++ci) {
            for (int iz = 0; iz < D; ++iz) {
                for (int iy = 0; iy < H; ++iy) {
                    for (int ix = 0; ix < W; ++ix) {
                        double acc = 0.0;
                        for (int kd = 0; kd < Kd; ++kd) {
                            const int tz = iz + pd - kd * dil[0];
                            if (tz < 0 || tz % s[0]) continue;
                            const int od = tz / s[0];
                            if (od >= Do) continue;
                            for (int kh = 0; kh < Kh; ++kh) {
                                const int ty = iy + ph - kh * dil[1];
                                if (ty < 0 || ty % s[1]) continue;
                                const int oy = ty / s[1];
                                if (oy >= Ho) continue;
                                for (int kw2 = 0; kw2 < Kw; ++kw2) {
                                    const int tx = ix + pw - kw2 * dil[2];
                                    if (tx < 0 || tx % s[2]) continue;
                                    const int ox = tx / s[2];
                                    if (ox >= Wo) continue;
                                    const std::size_t gb = (static_cast<std::size_t>(od) * Ho + oy) * Wo + ox;
                                    for (int co = 0; co < Co; ++co)
                                        acc += static_cast<double>(
                                                   wd[(((static_cast<std::size_t>(co) * Ci + ci) * Kd + kd) * Kh + kh) * Kw + kw2]) *
                                               g[static_cast<std::size_t>(co) * ovol + gb];
                                }
                            }
                        }
                        dx[((static_cast<std::size_t>(ci) * D + iz) * H + iy) * W + ix] += static_cast<float>(acc);
                    }
                }
            }
        }
    }
    if (w.requires_grad()) {
        w.ensure_grad();
        float* dw = w.grad();
        const float* xd = x.data();
#pragma omp parallel for collapse(2) schedule(static) if (static_cast<long>(Co) * Ci >= 8)
        for (int co = 0; co < Co; ++co) {
            for (int ci = 0; ci < Ci; ++ci) {
                const float* gc = g + static_cast<std::size_t>(co) * ovol;
                const float* xc = xd + static_cast<std::size_t>(ci) * D * H * W;
                for (int kd = 0; kd < Kd; ++kd)
                    for (int kh = 0; kh < Kh; ++kh)
                        for (int kw2 = 0; kw2 < Kw; ++kw2) {
                            double acc = 0.0;
                            for (int od = 0; od < Do; ++od) {
                                const int iz = od * s[0] - pd + kd * dil[0];
                                if (iz < 0 || iz >= D) continue;
                                for (int oy = 0; oy < Ho; ++oy) {
                                    const int iy = oy * s[1] - ph + kh * dil[1];
                                    if (iy < 0 || iy >= H) continue;
                                    const float* xrow = xc + (static_cast<std::size_t>(iz) * H + iy) * W;
                                    const float* grow = gc + (static_cast<std::size_t>(od) * Ho + oy) * Wo;
                                    for (int ox = 0; ox < Wo; ++ox) {
                                        const int ix = ox * s[2] - pw + kw2 * dil[2];
                                        if (ix < 0 || ix >= W) continue;
                                        acc += static_cast<double>(grow[ox]) * xrow[ix];
                                    }
                                }
                            }
                            dw[(((static_cast<std::size_t>(co) * Ci + ci) * Kd + kd) * Kh + kh) * Kw + kw2] +=
                                static_cast<float>(acc);
                        }
            }
        }
    }
    if (b.defined() && b.requires_grad()) {
        b.ensure_grad();
        float* db = b.grad();
        for (int co = 0; co < Co; ++co) {
            double acc = 0.0;
            const float* gc = g + static_cast<std::size_t>(co) * ovol;
            for (std::size_t i = 0; i < ovol; ++i) acc += gc[i];
            db[co] += static_cast<float>(acc);
        }
    }
}

} // namespace

Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& b,
              std::array<int, 3> stride, std::array<int, 3> dilation) {
    require(x.ndim() == 4, "conv3d: input must be [C,D,H,W], got " + shape_str(x.shape()));
    require(w.ndim() == 5, "conv3d: weight must be [Co,Ci,kd,kh,kw], got " + shape_str(w.shape()));
    require(x.dim(0) == w.dim(1), "conv3d: channel mismatch, input " + shape_str(x.shape()) +
                                      " vs weight " + shape_str(w.shape()));
    for (int a = 0; a < 3; ++a) {
        require(w.dim(2 + a) % 2 == 1, "conv3d: kernel extents must be odd");
        require(stride[a] >= 1 && dilation[a] >= 1, "conv3d: stride and dilation must be >= 1");
    }
    require(!b.defined() || (b.ndim() == 1 && b.dim(0) == w.dim(0)), "conv3d: bias length mismatch");
    const int Ci = x.dim(0), D = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Co = w.dim(0), Kd = w.dim(2), Kh = w.dim(3), Kw = w.dim(4);
    const int Do = conv_out_extent(D, Kd, stride[0], dilation[0]);
    const int Ho = conv_out_extent(H, Kh, stride[1], dilation[1]);
    const int Wo = conv_out_extent(W, Kw, stride[2], dilation[2]);
    require(Do > 0 && Ho > 0 && Wo > 0, "conv3d: non-positive output extent for input " + shape_str(x.shape()));
    const int pd = same_pad(Kd, dilation[0]), ph = same_pad(Kh, dilation[1]), pw = same_pad(Kw, dilation[2]);
    Tensor out = Tensor::zeros({Co, Do, Ho, Wo});
    {
        float* o = out.data();
        const float* xd = x.data();
        const float* wd = w.data();
        const float* bd = b.defined() ? b.data() : nullptr;
#pragma omp parallel for collapse(2) schedule(static) if (static_cast<long>(Co) * Do * Ho * Wo >= 2048)
        for (int co = 0; co < Co; ++co) {
            for (int od = 0; od < Do; ++od) {
                const int bz = od * stride[0] - pd;
                int kd_lo, kd_hi;
                tap_range(bz, dilation[0], D, Kd, kd_lo, kd_hi);
                for (int oy = 0; oy < Ho; ++oy) {
                    const int by = oy * stride[1] - ph;
                    int kh_lo, kh_hi;
                    tap_range(by, dilation[1], H, Kh, kh_lo, kh_hi);
                    float* orow = o + ((static_cast<std::size_t>(co) * Do + od) * Ho + oy) * Wo;
                    for (int ox = 0; ox < Wo; ++ox) {
                        const int bx = ox * stride[2] - pw;
                        int kw_lo, kw_hi;
                        tap_range(bx, dilation[2], W, Kw, kw_lo, kw_hi);
                        double acc = bd ? bd[co] : 0.0;
                        for (int ci = 0; ci < Ci; ++ci) {
                            const float* xc = xd + static_cast<std::size_t>(ci) * D * H * W;
                            const float* wc = wd + ((static_cast<std::size_t>(co) * Ci + ci) * Kd) * Kh * Kw;
                            for (int kd = kd_lo; kd < kd_hi; ++kd) {
                                const float* xz = xc + static_cast<std::size_t>(bz + kd * dilation[0]) * H * W;
                                const float* wz = wc + static_cast<std::size_t>(kd) * Kh * Kw;
                                for (int kh = kh_lo; kh < kh_hi; ++kh) {
                                    const float* xrow = xz + static_cast<std::size_t>(by + kh * dilation[1]) * W + bx;
                                    const float* wrow = wz + static_cast<std::size_t>(kh) * Kw;
                                    for (int kw2 = kw_lo; kw2 < kw_hi; ++kw2)
                                        acc += static_cast<double>(wrow[kw2]) * xrow[kw2 * dilation[2]];
                                }
                            }
                        }
                        orow[ox] = static_cast<float>(acc);
                    }
                }
            }
        }
    }
    if (track({&x, &w, &b})) {
        out.set_requires_grad(true);
        Tensor xc = x, wc = w, bc = b, oc = out;
        autograd::record([xc, wc, bc, oc, stride, dilation]() mutable {
            conv3d_backward(xc, wc, bc, oc, stride, dilation);
        });
    }
    return out;
}

// ------------------------------------------------------------- deconv2d

namespace {

void deconv2d_backward(Tensor x, Tensor w, Tensor b, Tensor out, int s) {
    if (!out.has_grad()) return;
    const int Ci = x.dim(0), H = x.dim(1), W = x.dim(2);
    const int Co = w.dim(1), K = w.dim(2);
    const int Ho = out.dim(1), Wo = out.dim(2);
    const int p = same_pad(K, 1);
    const float* g = out.grad();
    if (x.requires_grad()) {
        x.ensure_grad();
        float* dx = x.grad();
        const float* wd = w.data();
#pragma omp parallel for schedule(static) if (static_cast<long>(Ci) * H * W >= 2048)
        for (int ci = 0; ci < Ci; ++ci) {
            for (int iy = 0; iy < H; ++iy) {
                for (int ix = 0; ix < W; ++ix) {
                    double acc = 0.0;
                    for (int co = 0; co < Co; ++co) {
                        const float* gc = g + static_cast<std::size_t>(co) * Ho * Wo;
                        const float* wc = wd + (static_cast<std::size_t>(ci) * Co + co) * K * K;
                        for (int ky = 0; ky < K; ++ky) {
                            const int oy = iy * s - p + ky;
                            if (oy < 0 || oy >= Ho) continue;
                            for (int kx = 0; kx < K; ++kx) {
                                const int ox = ix * s - p + kx;
                                if (ox < 0 || ox >= Wo) continue;
                                acc += static_cast<double>(wc[static_cast<std::size_t>(ky) * K + kx]) *
                                       gc[static_cast<std::size_t>(oy) * Wo + ox];
                            }
                        }
                    }
                    dx[(static_cast<std::size_t>(ci) * H + iy) * W + ix] += static_cast<float>(acc);
                }
            }
        }
    }
    if (w.requires_grad()) {
        w.ensure_grad();
        float* dw = w.grad();
        const float* xd = x.data();
#pragma omp parallel for collapse(2) schedule(static) if (static_cast<long>(Ci) * Co >= 8)
        for (int ci = 0; ci < Ci; ++ci) {
            for (int co = 0; co < Co; ++co) {
                const float* xc = xd + static_cast<std::size_t>(ci) * H * W;
                const float* gc = g + static_cast<std::size_t>(co) * Ho * Wo;
                for (int ky = 0; ky < K; ++ky)
                    for (int kx = 0; kx < K; ++kx) {
                        double acc = 0.0;
                        for (int iy = 0; iy < H; ++iy) {
                            const int oy = iy * s - p + ky;
                            if (oy < 0 || oy >= Ho) continue;
                            const float* xrow = xc + static_cast<std::size_t>(iy) * W;
                            const float* grow = gc + static_cast<std::size_t>(oy) * Wo;
                            for (int ix = 0; ix < W; ++ix) {
                                const int ox = ix * s - p + kx;
                                if (ox < 0 || ox >= Wo) continue;
                                acc += static_cast<double>(xrow[ix]) * grow[ox];
                            }
                        }
                        dw[((static_cast<std::size_t>(ci) * Co + co) * K + ky) * K + kx] += static_cast<float>(acc);
                    }
            }
        }
    }
    if (b.defined() && b.requires_grad()) {
        b.ensure_grad();
        float* db = b.grad();
        for (int co = 0; co < Co; ++co) {
            double acc = 0.0;
            const float* gc = g + static_cast<std::size_t>(co) * Ho * Wo;
            for (long i = 0; i < static_cast<long>(Ho) * Wo; ++i) acc += gc[i];
            db[co] += static_cast<float>(acc);
        }
    }
}

} // namespace

Tensor deconv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int out_h, int out_w) {
    require(x.ndim() == 3, "deconv2d: input must be [C,H,W], got " + shape_str(x.shape()));
    require(w.ndim() == 4, "deconv2d: weight must be [Ci,Co,k,k], got " + shape_str(w.shape()));
    require(x.dim(0) == w.dim(0), "deconv2d: channel mismatch, input " + shape_str(x.shape()) +
                                      " vs weight " + shape_str(w.shape()));
    require(w.dim(2) == w.dim(3) && w.dim(2) % 2 == 1, "deconv2d: kernel must be square and odd");
    require(stride >= 1, "deconv2d: stride must be >= 1");
    const int K = w.dim(2), p = same_pad(K, 1);
    const int H = x.dim(1), W = x.dim(2);
    if (out_h < 0) out_h = stride * H;
    if (out_w < 0) out_w = stride * W;
    for (auto [in, out] : {std::pair{H, out_h}, std::pair{W, out_w}}) {
        int base = deconv_out_extent(in, stride, 0);
        require(out >= base && out < base + stride,
                "deconv2d: target extent " + std::to_string(out) + " unreachable from input extent " +
                    std::to_string(in) + " at stride " + std::to_string(stride));
    }
    const int Co = w.dim(1);
    Tensor out = Tensor::zeros({Co, out_h, out_w});
    {
        float* o = out.data();
        const float* xd = x.data();
        const float* wd = w.data();
        const float* bd = b.defined() ? b.data() : nullptr;
        const int Ci = x.dim(0);
#pragma omp parallel for collapse(2) schedule(static) if (static_cast<long>(Co) * out_h * out_w >= 2048)
        for (int co = 0; co < Co; ++co) {
            for (int oy = 0; oy < out_h; ++oy) {
                float* orow = o + (static_cast<std::size_t>(co) * out_h + oy) * out_w;
                for (int ox = 0; ox < out_w; ++ox) {
                    double acc = bd ? bd[co] : 0.0;
                    for (int ky = 0; ky < K; ++ky) {
                        const int ty = oy + p - ky;
                        if (ty < 0 || ty % stride) continue;
                        const int iy = ty / stride;
                        if (iy >= H) continue;
                        for (int kx = 0; kx < K; ++kx) {
                            const int tx = ox + p - kx;
                            if (tx < 0 || tx % stride) continue;
                            const int ix = tx / stride;
                            if (ix >= W) continue;
                            for (int ci = 0; ci < Ci; ++ci)
                                acc += static_cast<double>(
                                           wd[((static_cast<std::size_t>(ci) * Co + co) * K + ky) * K + kx]) *
                                       xd[(static_cast<std::size_t>(ci) * H + iy) * W + ix];
                        }
                    }
                    orow[ox] = static_cast<float>(acc);
                }
            }
        }
    }
    if (track({&x, &w, &b})) {
        out.set_requires_grad(true);
        Tensor xc = x, wc = w, bc = b, oc = out;
        autograd::record([xc, wc, bc, oc, stride]() mutable { deconv2d_backward(xc, wc, bc, oc, stride); });
    }
    return out;
}

// ------------------------------------------------------------- deconv3d

namespace {

void deconv3d_backward(Tensor x, Tensor w, Tensor b, Tensor out, std::array<int, 3> s) {
    if (!out.has_grad()) return;
    const int Ci = x.dim(0), D = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Co = w.dim(1), Kd = w.dim(2), Kh = w.dim(3), Kw = w.dim(4);
    const int Do = out.dim(1), Ho = out.dim(2), Wo = out.dim(3);
    const int pd = same_pad(Kd, 1), ph = same_pad(Kh, 1), pw = same_pad(Kw, 1);
    const float* g = out.grad();
    const std::size_t ovol = static_cast<std::size_t>(Do) * Ho * Wo;
    if (x.requires_grad()) {
        x.ensure_grad();
        float* dx = x.grad();
        const float* wd = w.data();
#pragma omp parallel for schedule(static) if (static_cast<long>(Ci) * D * H * W >= 2048)
        for (int ci = 0; ci < Ci; ++ci) {
            for (int iz = 0; iz < D; ++iz)
                for (int iy = 0; iy < H; ++iy)
                    for (int ix = 0; ix < W; ++ix) {
                        double acc = 0.0;
                        for (int co = 0; co < Co; ++co) {
                            const float* gc = g + static_cast<std::size_t>(co) * ovol;
                            const float* wc = wd + (static_cast<std::size_t>(ci) * Co + co) * Kd * Kh * Kw;
                            for (int kd = 0; kd < Kd; ++kd) {
                                const int od = iz * s[0] - pd + kd;
                                if (od < 0 || od >= Do) continue;
                                for (int kh = 0; kh < Kh; ++kh) {
                                    const int oy = iy * s[1] - ph + kh;
                                    if (oy < 0 || oy >= Ho) continue;
                                    for (int kw2 = 0; kw2 < Kw; ++kw2) {
                                        const int ox = ix * s[2] - pw + kw2;
                                        if (ox < 0 || ox >= Wo) continue;
                                        acc += static_cast<double>(wc[(static_cast<std::size_t>(kd) * Kh + kh) * Kw + kw2]) *
                                               gc[(static_cast<std::size_t>(od) * Ho + oy) * Wo + ox];
                                    }
                                }
                            }
                        }
                        dx[((static_cast<std::size_t>(ci) * D + iz) * H + iy) * W + ix] += static_cast<float>(acc);
                    }
        }
    }
    if (w.requires_grad()) {
        w.ensure_grad();
        float* dw = w.grad();
        const float* xd = x.data();
#pragma omp parallel for collapse(2) schedule(static) if (static_cast<long>(Ci) * Co >= 8)
        for (int ci = 0; ci < Ci; ++ci) {
            for (int co = 0; co < Co; ++co) {
                const float* xc = xd + static_cast<std::size_t>(ci) * D * H * W;
                const float* gc = g + static_cast<std::size_t>(co) * ovol;
                for (int kd = 0; kd < Kd; ++kd)
                    for (int kh = 0; kh < Kh; ++kh)
                        for (int kw2 = 0; kw2 < Kw; ++kw2) {
                            double acc = 0.0;
                            for (int iz = 0; iz < D; ++iz) {
                                const int od = iz * s[0] - pd + kd;
                                if (od < 0 || od >= Do) continue;
                                for (int iy = 0; iy < H; ++iy) {
                                    const int oy = iy * s[1] - ph + kh;
                                    if (oy < 0 || oy >= Ho) continue;
                                    const float* xrow = xc + (static_cast<std::size_t>(iz) * H + iy) * W;
                                    const float* grow = gc + (static_cast<std::size_t>(od) * Ho + oy) * Wo;
                                    for (int ix = 0; ix < W; ++ix) {
                                        const int ox = ix * s[2] - pw + kw2;
                                        if (ox < 0 || ox >= Wo) continue;
                                        acc += static_cast<double>(xrow[ix]) * grow[ox];
                                    }
                                }
                            }
                            dw[(((static_cast<std::size_t>(ci) * Co + co) * Kd + kd) * Kh + kh) * Kw + kw2] +=
                                static_cast<float>(acc);
                        }
            }
        }
    }
    if (b.defined() && b.requires_grad()) {
        b.ensure_grad();
        float* db = b.grad();
        for (int co = 0; co < Co; ++co) {
            double acc = 0.0;
            const float* gc = g + static_cast<std::size_t>(co) * ovol;
            for (std::size_t i = 0; i < ovol; ++i) acc += gc[i];
            db[co] += static_cast<float>(acc);
        }
    }
}

} // namespace

Tensor deconv3d(const Tensor& x, const Tensor& w, const Tensor& b,
                std::array<int, 3> stride, std::array<int, 3> out_extent) {
    require(x.ndim() == 4, "deconv3d: input must be [C,D,H,W], got " + shape_str(x.shape()));
    require(w.ndim() == 5, "deconv3d: weight must be [Ci,Co,kd,kh,kw], got " + shape_str(w.shape()));
    require(x.dim(0) == w.dim(0), "deconv3d: channel mismatch, input " + shape_str(x.shape()) +
                                      " vs weight " + shape_str(w.shape()));
    for (int a = 0; a < 3; ++a) {
        require(w.dim(2 + a) % 2 == 1, "deconv3d: kernel extents must be odd");
        require(stride[a] >= 1, "deconv3d: stride must be >= 1");
        if (out_extent[a] < 0) out_extent[a] = stride[a] * x.dim(1 + a);
        int base = deconv_out_extent(x.dim(1 + a), stride[a], 0);
        require(out_extent[a] >= base && out_extent[a] < base + stride[a],
                "deconv3d: target extent " + std::to_string(out_extent[a]) + " unreachable from input extent " +
                    std::to_string(x.dim(1 + a)) + " at stride " + std::to_string(stride[a]));
    }
    const int Ci = x.dim(0), D = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Co = w.dim(1), Kd = w.dim(2), Kh = w.dim(3), Kw = w.dim(4);
    const int pd = same_pad(Kd, 1), ph = same_pad(Kh, 1), pw = same_pad(Kw, 1);
    const int Do = out_extent[0], Ho = out_extent[1], Wo = out_extent[2];
    Tensor out = Tensor::zeros({Co, Do, Ho, Wo});
    {
        float* o = out.data();
        const float* xd = x.data();
        const float* wd = w.data();
        const float* bd = b.defined() ? b.data() : nullptr;
#pragma omp parallel for collapse(2) schedule(static) if (static_cast<long>(Co) * Do * Ho * Wo >= 2048)
        for (int co = 0; co < Co; ++co) {
            for (int od = 0; od < Do; ++od) {
                for (int oy = 0; oy < Ho; ++oy) {
                    float* orow = o + ((static_cast<std::size_t>(co) * Do + od) * Ho + oy) * Wo;
                    for (int ox = 0; ox < Wo; ++ox) {
                        double acc = bd ? bd[co] : 0.0;
                        for (int kd = 0; kd < Kd; ++kd) {
                            const int tz = od + pd - kd;
                            if (tz < 0 || tz % stride[0]) continue;
                            const int iz = tz / stride[0];
                            if (iz >= D) continue;
                            for (int kh = 0; kh < Kh; ++kh) {
                                const int ty = oy + ph - kh;
                                if (ty < 0 || ty % stride[1]) continue;
                                const int iy = ty / stride[1];
                                if (iy >= H) continue;
                                for (int kw2 = 0; kw2 < Kw; ++kw2) {
                                    const int tx = ox + pw - kw2;
                                    if (tx < 0 || tx % stride[2]) continue;
                                    const int ix = tx / stride[2];
                                    if (ix >= W) continue;
                                    const std::size_t xb = ((static_cast<std::size_t>(0) * D + iz) * H + iy) * W + ix;
                                    const std::size_t xstep = static_cast<std::size_t>(D) * H * W;
                                    for (int ci = 0; ci < Ci; ++ci)
                                        acc += static_cast<double>(
                                                   wd[(((static_cast<std::size_t>(ci) * Co + co) * Kd + kd) * Kh + kh) * Kw +
                                                      kw2]) *
                                               xd[static_cast<std::size_t>(ci) * xstep + xb];
                                }
                            }
                        }
                        orow[ox] = static_cast<float>(acc);
                    }
                }
            }
        }
    }
    if (track({&x, &w, &b})) {
        out.set_requires_grad(true);
        Tensor xc = x, wc = w, bc = b, oc = out;
        autograd::record([xc, wc, bc, oc, stride]() mutable { deconv3d_backward(xc, wc, bc, oc, stride); });
    }
    return out;
}

// ------------------------------------------------------------ batchnorm

Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 Tensor running_mean, Tensor running_var, bool train, float eps, float momentum) {
    require(x.ndim() >= 2, "batchnorm: input must have a channel axis plus data axes");
    const int C = x.dim(0);
    require(gamma.ndim() == 1 && gamma.dim(0) == C && beta.ndim() == 1 && beta.dim(0) == C,
            "batchnorm: gamma/beta length must match channel count " + std::to_string(C));
    require(running_mean.dim(0) == C && running_var.dim(0) == C, "batchnorm: running stat length mismatch");
    const std::size_t n = x.numel() / static_cast<std::size_t>(C);
    Tensor out = Tensor::zeros(x.shape());
    std::vector<float> invstd(static_cast<std::size_t>(C));
    std::vector<float> xhat; // saved for backward in train mode
    const float* xd = x.data();
    const float* gd = gamma.data();
    const float* bd = beta.data();
    float* od = out.data();
    const bool need_grad = track({&x, &gamma, &beta});
    if (train) {
        xhat.resize(x.numel());
        for (int c = 0; c < C; ++c) {
            const float* xc = xd + static_cast<std::size_t>(c) * n;
            double mean = 0.0;
            for (std::size_t i = 0; i < n; ++i) mean += xc[i];
            mean /= static_cast<double>(n);
            double var = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double d = xc[i] - mean;
                var += d * d;
            }
            var /= static_cast<double>(n);
            const double istd = 1.0 / std::sqrt(var + eps);
            invstd[static_cast<std::size_t>(c)] = static_cast<float>(istd);
            float* oc = od + static_cast<std::size_t>(c) * n;
            float* hc = xhat.data() + static_cast<std::size_t>(c) * n;
            for (std::size_t i = 0; i < n; ++i) {
                const float h = static_cast<float>((xc[i] - mean) * istd);
                hc[i] = h;
                oc[i] = gd[c] * h + bd[c];
            }
            running_mean.data()[c] = (1.0f - momentum) * running_mean.data()[c] + momentum * static_cast<float>(mean);
            running_var.data()[c] = (1.0f - momentum) * running_var.data()[c] + momentum * static_cast<float>(var);
        }
    } else {
        for (int c = 0; c < C; ++c) {
            const double istd = 1.0 / std::sqrt(static_cast<double>(running_var.data()[c]) + eps);
            invstd[static_cast<std::size_t>(c)] = static_cast<float>(istd);
            const float m = running_mean.data()[c];
            const float* xc = xd + static_cast<std::size_t>(c) * n;
            float* oc = od + static_cast<std::size_t>(c) * n;
            for (std::size_t i = 0; i < n; ++i)
                oc[i] = gd[c] * static_cast<float>((xc[i] - m) * istd) + bd[c];
        }
    }
    if (need_grad) {
        out.set_requires_grad(true);
        Tensor xc = x, gc = gamma, bc = beta, oc = out, rm = running_mean;
        auto saved_xhat = std::make_shared<std::vector<float>>(std::move(xhat));
        auto saved_invstd = std::make_shared<std::vector<float>>(std::move(invstd));
        autograd::record([xc, gc, bc, oc, rm, saved_xhat, saved_invstd, train, C, n]() mutable {
            if (!oc.has_grad()) return;
            const float* g = oc.grad();
            const float* gm = gc.data();
            if (train) {
                const std::vector<float>& h = *saved_xhat;
                for (int c = 0; c < C; ++c) {
                    const float* gch = g + static_cast<std::size_t>(c) * n;
                    const float* hc = h.data() + static_cast<std::size_t>(c) * n;
                    double sum_g = 0.0, sum_gh = 0.0;
                    for (std::size_t i = 0; i < n; ++i) {
                        sum_g += gch[i];
                        sum_gh += static_cast<double>(gch[i]) * hc[i];
                    }
                    if (gc.requires_grad()) {
                        gc.ensure_grad();
                        gc.grad()[c] += static_cast<float>(sum_gh);
                    }
                    if (bc.requires_grad()) {
                        bc.ensure_grad();
                        bc.grad()[c] += static_cast<float>(sum_g);
                    }
                    if (xc.requires_grad()) {
                        xc.ensure_grad();
                        float* dxc = xc.grad() + static_cast<std::size_t>(c) * n;
                        const double mg = sum_g / static_cast<double>(n);
                        const double mgh = sum_gh / static_cast<double>(n);
                        const double k = static_cast<double>(gm[c]) * (*saved_invstd)[static_cast<std::size_t>(c)];
                        for (std::size_t i = 0; i < n; ++i)
                            dxc[i] += static_cast<float>(k * (gch[i] - mg - hc[i] * mgh));
                    }
                }
            } else {
                for (int c = 0; c < C; ++c) {
                    const float* gch = g + static_cast<std::size_t>(c) * n;
                    const float istd = (*saved_invstd)[static_cast<std::size_t>(c)];
                    const float m = rm.data()[c];
                    if (xc.requires_grad()) {
                        xc.ensure_grad();
                        float* dxc = xc.grad() + static_cast<std::size_t>(c) * n;
                        const float k = gm[c] * istd;
                        for (std::size_t i = 0; i < n; ++i) dxc[i] += k * gch[i];
                    }
                    if (gc.requires_grad() || bc.requires_grad()) {
                        const float* xch = xc.data() + static_cast<std::size_t>(c) * n;
                        double sum_g = 0.0, sum_gh = 0.0;
                        for (std::size_t i = 0; i < n; ++i) {
                            sum_g += gch[i];
                            sum_gh += static_cast<double>(gch[i]) * (xch[i] - m) * istd;
                        }
                        if (gc.requires_grad()) {
                            gc.ensure_grad();
                            gc.grad()[c] += static_cast<float>(sum_gh);
                        }
                        if (bc.requires_grad()) {
                            bc.ensure_grad();
                            bc.grad()[c] += static_cast<float>(sum_g);
                        }
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------- elementwise

Tensor leaky_relu(const Tensor& x, float slope) {
    Tensor out = Tensor::zeros(x.shape());
    const float* xd = x.data();
    float* od = out.data();
    const std::size_t nn = x.numel();
    for (std::size_t i = 0; i < nn; ++i) od[i] = xd[i] > 0.0f ? xd[i] : slope * xd[i];
    if (track({&x})) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        autograd::record([xc, oc, slope]() mutable {
            if (!oc.has_grad() || !xc.requires_grad()) return;
            xc.ensure_grad();
            const float* g = oc.grad();
            const float* xd2 = xc.data();
            float* dx = xc.grad();
            const std::size_t n2 = xc.numel();
            for (std::size_t i = 0; i < n2; ++i) dx[i] += xd2[i] > 0.0f ? g[i] : slope * g[i];
        });
    }
    return out;
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
    require(!xs.empty(), "concat: needs at least one input");
    const int nd = xs[0].ndim();
    require(axis >= 0 && axis < nd, "concat: axis out of range");
    std::vector<int> out_shape = xs[0].shape();
    int axis_total = 0;
    for (const Tensor& t : xs) {
        require(t.ndim() == nd, "concat: rank mismatch");
        for (int d = 0; d < nd; ++d)
            if (d != axis)
                require(t.dim(d) == xs[0].dim(d), "concat: extent mismatch on axis " + std::to_string(d) +
                                                      ": " + shape_str(t.shape()) + " vs " + shape_str(xs[0].shape()));
        axis_total += t.dim(axis);
    }
    out_shape[static_cast<std::size_t>(axis)] = axis_total;
    Tensor out = Tensor::zeros(out_shape);
    std::size_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= static_cast<std::size_t>(xs[0].dim(d));
    for (int d = axis + 1; d < nd; ++d) inner *= static_cast<std::size_t>(xs[0].dim(d));
    const std::size_t out_row = static_cast<std::size_t>(axis_total) * inner;
    std::size_t off = 0;
    for (const Tensor& t : xs) {
        const std::size_t trow = static_cast<std::size_t>(t.dim(axis)) * inner;
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(t.data() + o * trow, trow, out.data() + o * out_row + off);
        off += trow;
    }
    bool any = false;
    for (const Tensor& t : xs)
        if (t.requires_grad()) any = true;
    if (autograd::enabled() && any) {
        out.set_requires_grad(true);
        std::vector<Tensor> ins = xs;
        Tensor oc = out;
        autograd::record([ins, oc, outer, inner, out_row]() mutable {
            if (!oc.has_grad()) return;
            const float* g = oc.grad();
            std::size_t off2 = 0;
            for (Tensor& t : ins) {
                const std::size_t trow = t.numel() / outer;
                if (t.requires_grad()) {
                    t.ensure_grad();
                    for (std::size_t o = 0; o < outer; ++o) {
                        const float* src = g + o * out_row + off2;
                        float* dst = t.grad() + o * trow;
                        for (std::size_t i = 0; i < trow; ++i) dst[i] += src[i];
                    }
                }
                off2 += trow;
            }
        });
    }
    return out;
}

Tensor slice(const Tensor& x, int axis, int start, int len) {
    const int nd = x.ndim();
    require(axis >= 0 && axis < nd, "slice: axis out of range");
    require(start >= 0 && len > 0 && start + len <= x.dim(axis), "slice: range out of bounds");
    std::vector<int> out_shape = x.shape();
    out_shape[static_cast<std::size_t>(axis)] = len;
    Tensor out = Tensor::zeros(out_shape);
    std::size_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= static_cast<std::size_t>(x.dim(d));
    for (int d = axis + 1; d < nd; ++d) inner *= static_cast<std::size_t>(x.dim(d));
    const std::size_t in_row = static_cast<std::size_t>(x.dim(axis)) * inner;
    const std::size_t out_row2 = static_cast<std::size_t>(len) * inner;
    for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(x.data() + o * in_row + static_cast<std::size_t>(start) * inner, out_row2,
                    out.data() + o * out_row2);
    if (track({&x})) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        autograd::record([xc, oc, outer, inner, in_row, out_row2, start]() mutable {
            if (!oc.has_grad() || !xc.requires_grad()) return;
            xc.ensure_grad();
            const float* g = oc.grad();
            for (std::size_t o = 0; o < outer; ++o) {
                float* dst = xc.grad() + o * in_row + static_cast<std::size_t>(start) * inner;
                const float* src = g + o * out_row2;
                for (std::size_t i = 0; i < out_row2; ++i) dst[i] += src[i];
            }
        });
    }
    return out;
}

Tensor broadcast_sum(const Tensor& v, const Tensor& f) {
    require(v.ndim() == 4, "broadcast_sum: volume must be [C,D,H,W], got " + shape_str(v.shape()));
    require(f.ndim() == 3, "broadcast_sum: feature map must be [C,H,W], got " + shape_str(f.shape()));
    require(v.dim(0) == f.dim(0) && v.dim(2) == f.dim(1) && v.dim(3) == f.dim(2),
            "broadcast_sum: extent mismatch, volume " + shape_str(v.shape()) + " vs map " + shape_str(f.shape()));
    const int C = v.dim(0), D = v.dim(1);
    const std::size_t plane = static_cast<std::size_t>(v.dim(2)) * v.dim(3);
    Tensor out = Tensor::zeros(v.shape());
    const float* vd = v.data();
    const float* fd = f.data();
    float* od = out.data();
    for (int c = 0; c < C; ++c) {
        const float* fc = fd + static_cast<std::size_t>(c) * plane;
        for (int d = 0; d < D; ++d) {
            const std::size_t base = (static_cast<std::size_t>(c) * D + d) * plane;
            for (std::size_t i = 0; i < plane; ++i) od[base + i] = vd[base + i] + fc[i];
        }
    }
    if (track({&v, &f})) {
        out.set_requires_grad(true);
        Tensor vc = v, fc = f, oc = out;
        autograd::record([vc, fc, oc, C, D, plane]() mutable {
            if (!oc.has_grad()) return;
            const float* g = oc.grad();
            if (vc.requires_grad()) {
                vc.ensure_grad();
                float* dv = vc.grad();
                const std::size_t nn = vc.numel();
                for (std::size_t i = 0; i < nn; ++i) dv[i] += g[i];
            }
            if (fc.requires_grad()) {
                fc.ensure_grad();
                float* df = fc.grad();
                for (int c = 0; c < C; ++c) {
                    float* dfc = df + static_cast<std::size_t>(c) * plane;
                    for (int d = 0; d < D; ++d) {
                        const float* gp = g + (static_cast<std::size_t>(c) * D + d) * plane;
                        for (std::size_t i = 0; i < plane; ++i) dfc[i] += gp[i];
                    }
                }
            }
        });
    }
    return out;
}

// ------------------------------------------------------------ trilinear

namespace {

struct LerpAxis {
    std::vector<int> i0, i1;
    std::vector<float> t;
};

// align-corners=false source mapping with edge clamping.
LerpAxis lerp_axis(int in, int out) {
    LerpAxis a;
    a.i0.resize(static_cast<std::size_t>(out));
    a.i1.resize(static_cast<std::size_t>(out));
    a.t.resize(static_cast<std::size_t>(out));
    const double scale = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
        double src = (o + 0.5) * scale - 0.5;
        if (src < 0.0) src = 0.0;
        if (src > in - 1) src = in - 1;
        int lo = static_cast<int>(std::floor(src));
        if (lo > in - 1) lo = in - 1;
        a.i0[static_cast<std::size_t>(o)] = lo;
        a.i1[static_cast<std::size_t>(o)] = std::min(lo + 1, in - 1);
        a.t[static_cast<std::size_t>(o)] = static_cast<float>(src - lo);
    }
    return a;
}

} // namespace

Tensor trilinear_resize(const Tensor& v, int d_out, int h_out, int w_out) {
    require(v.ndim() == 3, "trilinear_resize: input must be [D,H,W], got " + shape_str(v.shape()));
    require(d_out > 0 && h_out > 0 && w_out > 0, "trilinear_resize: output extents must be positive");
    const int D = v.dim(0), H = v.dim(1), W = v.dim(2);
    auto az = lerp_axis(D, d_out), ay = lerp_axis(H, h_out), ax = lerp_axis(W, w_out);
    Tensor out = Tensor::zeros({d_out, h_out, w_out});
    const float* vd = v.data();
    float* od = out.data();
    for (int z = 0; z < d_out; ++z) {
        const int z0 = az.i0[static_cast<std::size_t>(z)], z1 = az.i1[static_cast<std::size_t>(z)];
        const float tz = az.t[static_cast<std::size_t>(z)];
        for (int y = 0; y < h_out; ++y) {
            const int y0 = ay.i0[static_cast<std::size_t>(y)], y1 = ay.i1[static_cast<std::size_t>(y)];
            const float ty = ay.t[static_cast<std::size_t>(y)];
            float* orow = od + (static_cast<std::size_t>(z) * h_out + y) * w_out;
            const float* p00 = vd + (static_cast<std::size_t>(z0) * H + y0) * W;
            const float* p01 = vd + (static_cast<std::size_t>(z0) * H + y1) * W;
            const float* p10 = vd + (static_cast<std::size_t>(z1) * H + y0) * W;
            const float* p11 = vd + (static_cast<std::size_t>(z1) * H + y1) * W;
            for (int x = 0; x < w_out; ++x) {
                const int x0 = ax.i0[static_cast<std::size_t>(x)], x1 = ax.i1[static_cast<std::size_t>(x)];
                const float tx = ax.t[static_cast<std::size_t>(x)];
                const float c00 = p00[x0] + tx * (p00[x1] - p00[x0]);
                const float c01 = p01[x0] + tx * (p01[x1] - p01[x0]);
                const float c10 = p10[x0] + tx * (p10[x1] - p10[x0]);
                const float c11 = p11[x0] + tx * (p11[x1] - p11[x0]);
                const float c0 = c00 + ty * (c01 - c00);
                const float c1 = c10 + ty * (c11 - c10);
                orow[x] = c0 + tz * (c1 - c0);
            }
        }
    }
    if (track({&v})) {
        out.set_requires_grad(true);
        Tensor vc = v, oc = out;
        autograd::record([vc, oc, az, ay, ax, H, W, d_out, h_out, w_out]() mutable {
            if (!oc.has_grad() || !vc.requires_grad()) return;
            vc.ensure_grad();
            const float* g = oc.grad();
            float* dv = vc.grad();
            for (int z = 0; z < d_out; ++z) {
                const int z0 = az.i0[static_cast<std::size_t>(z)], z1 = az.i1[static_cast<std::size_t>(z)];
                const float tz = az.t[static_cast<std::size_t>(z)];
                for (int y = 0; y < h_out; ++y) {
                    const int y0 = ay.i0[static_cast<std::size_t>(y)], y1 = ay.i1[static_cast<std::size_t>(y)];
                    const float ty = ay.t[static_cast<std::size_t>(y)];
                    const float* grow = g + (static_cast<std::size_t>(z) * h_out + y) * w_out;
                    for (int x = 0; x < w_out; ++x) {
                        const int x0 = ax.i0[static_cast<std::size_t>(x)], x1 = ax.i1[static_cast<std::size_t>(x)];
                        const float tx = ax.t[static_cast<std::size_t>(x)];
                        const float gv = grow[x];
                        dv[(static_cast<std::size_t>(z0) * H + y0) * W + x0] += gv * (1 - tz) * (1 - ty) * (1 - tx);
                        dv[(static_cast<std::size_t>(z0) * H + y0) * W + x1] += gv * (1 - tz) * (1 - ty) * tx;
                        dv[(static_cast<std::size_t>(z0) * H + y1) * W + x0] += gv * (1 - tz) * ty * (1 - tx);
                        dv[(static_cast<std::size_t>(z0) * H + y1) * W + x1] += gv * (1 - tz) * ty * tx;
                        dv[(static_cast<std::size_t>(z1) * H + y0) * W + x0] += gv * tz * (1 - ty) * (1 - tx);
                        dv[(static_cast<std::size_t>(z1) * H + y0) * W + x1] += gv * tz * (1 - ty) * tx;
                        dv[(static_cast<std::size_t>(z1) * H + y1) * W + x0] += gv * tz * ty * (1 - tx);
                        dv[(static_cast<std::size_t>(z1) * H + y1) * W + x1] += gv * tz * ty * tx;
                    }
                }
            }
        });
    }
    return out;
}

Tensor trilinear_upsample(const Tensor& v, int factor) {
    require(factor >= 1, "trilinear_upsample: factor must be >= 1");
    return trilinear_resize(v, v.dim(0) * factor, v.dim(1) * factor, v.dim(2) * factor);
}

// --------------------------------------------------------- soft argmax

Tensor softmax_bins(const Tensor& v) {
    require(v.ndim() == 3, "softmax_bins: input must be [D,H,W], got " + shape_str(v.shape()));
    const int D = v.dim(0);
    const std::size_t plane = static_cast<std::size_t>(v.dim(1)) * v.dim(2);
    Tensor out = Tensor::zeros(v.shape());
    const float* vd = v.data();
    float* od = out.data();
    for (std::size_t i = 0; i < plane; ++i) {
        float m = vd[i];
        for (int d = 1; d < D; ++d) m = std::max(m, vd[static_cast<std::size_t>(d) * plane + i]);
        double s = 0.0;
        for (int d = 0; d < D; ++d) {
            const float e = std::exp(vd[static_cast<std::size_t>(d) * plane + i] - m);
            od[static_cast<std::size_t>(d) * plane + i] = e;
            s += e;
        }
        const float inv = static_cast<float>(1.0 / s);
        for (int d = 0; d < D; ++d) od[static_cast<std::size_t>(d) * plane + i] *= inv;
    }
    if (track({&v})) {
        out.set_requires_grad(true);
        Tensor vc = v, oc = out;
        autograd::record([vc, oc, D, plane]() mutable {
            if (!oc.has_grad() || !vc.requires_grad()) return;
            vc.ensure_grad();
            const float* g = oc.grad();
            const float* p = oc.data();
            float* dv = vc.grad();
            for (std::size_t i = 0; i < plane; ++i) {
                double dot = 0.0;
                for (int d = 0; d < D; ++d)
                    dot += static_cast<double>(g[static_cast<std::size_t>(d) * plane + i]) *
                           p[static_cast<std::size_t>(d) * plane + i];
                for (int d = 0; d < D; ++d) {
                    const std::size_t k = static_cast<std::size_t>(d) * plane + i;
                    dv[k] += p[k] * (g[k] - static_cast<float>(dot));
                }
            }
        });
    }
    return out;
}

Tensor disparity_expectation(const Tensor& p) {
    require(p.ndim() == 3, "disparity_expectation: input must be [D,H,W], got " + shape_str(p.shape()));
    const int D = p.dim(0);
    const std::size_t plane = static_cast<std::size_t>(p.dim(1)) * p.dim(2);
    Tensor out = Tensor::zeros({p.dim(1), p.dim(2)});
    const float* pd = p.data();
    float* od = out.data();
    for (std::size_t i = 0; i < plane; ++i) {
        double acc = 0.0;
        for (int d = 0; d < D; ++d) acc += static_cast<double>(d) * pd[static_cast<std::size_t>(d) * plane + i];
        od[i] = static_cast<float>(acc);
    }
    if (track({&p})) {
        out.set_requires_grad(true);
        Tensor pc = p, oc = out;
        autograd::record([pc, oc, D, plane]() mutable {
            if (!oc.has_grad() || !pc.requires_grad()) return;
            pc.ensure_grad();
            const float* g = oc.grad();
            float* dp = pc.grad();
            for (int d = 0; d < D; ++d) {
                float* dpd = dp + static_cast<std::size_t>(d) * plane;
                for (std::size_t i = 0; i < plane; ++i) dpd[i] += static_cast<float>(d) * g[i];
            }
        });
    }
    return out;
}

// ----------------------------------------------------------- arithmetic

Tensor add(const Tensor& a, const Tensor& b) {
    require(a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor out = Tensor::zeros(a.shape());
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
    if (track({&a, &b})) {
        out.set_requires_grad(true);
        Tensor ac = a, bc = b, oc = out;
        autograd::record([ac, bc, oc]() mutable {
            if (!oc.has_grad()) return;
            const float* g = oc.grad();
            const std::size_t n2 = oc.numel();
            for (Tensor* t : {&ac, &bc}) {
                if (!t->requires_grad()) continue;
                t->ensure_grad();
                float* d = t->grad();
                for (std::size_t i = 0; i < n2; ++i) d[i] += g[i];
            }
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require(a.shape() == b.shape(), "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor out = Tensor::zeros(a.shape());
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
    if (track({&a, &b})) {
        out.set_requires_grad(true);
        Tensor ac = a, bc = b, oc = out;
        autograd::record([ac, bc, oc]() mutable {
            if (!oc.has_grad()) return;
            const float* g = oc.grad();
            const std::size_t n2 = oc.numel();
            if (ac.requires_grad()) {
                ac.ensure_grad();
                for (std::size_t i = 0; i < n2; ++i) ac.grad()[i] += g[i] * bc.data()[i];
            }
            if (bc.requires_grad()) {
                bc.ensure_grad();
                for (std::size_t i = 0; i < n2; ++i) bc.grad()[i] += g[i] * ac.data()[i];
            }
        });
    }
    return out;
}

Tensor scale(const Tensor& a, float s) {
    Tensor out = Tensor::zeros(a.shape());
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * s;
    if (track({&a})) {
        out.set_requires_grad(true);
        Tensor ac = a, oc = out;
        autograd::record([ac, oc, s]() mutable {
            if (!oc.has_grad() || !ac.requires_grad()) return;
            ac.ensure_grad();
            const float* g = oc.grad();
            const std::size_t n2 = oc.numel();
            for (std::size_t i = 0; i < n2; ++i) ac.grad()[i] += g[i] * s;
        });
    }
    return out;
}

Tensor sum(const Tensor& a) {
    double acc = 0.0;
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) acc += a.data()[i];
    Tensor out = Tensor::scalar(static_cast<float>(acc));
    if (track({&a})) {
        out.set_requires_grad(true);
        Tensor ac = a, oc = out;
        autograd::record([ac, oc]() mutable {
            if (!oc.has_grad() || !ac.requires_grad()) return;
            ac.ensure_grad();
            const float g = oc.grad()[0];
            const std::size_t n2 = ac.numel();
            for (std::size_t i = 0; i < n2; ++i) ac.grad()[i] += g;
        });
    }
    return out;
}

Tensor reshape(const Tensor& x, std::vector<int> new_shape) {
    require(shape_numel(new_shape) == x.numel(),
            "reshape: element count mismatch " + shape_str(x.shape()) + " -> " + shape_str(new_shape));
    Tensor out = Tensor::from_data(std::move(new_shape), x.vec());
    if (track({&x})) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        autograd::record([xc, oc]() mutable {
            if (!oc.has_grad() || !xc.requires_grad()) return;
            xc.ensure_grad();
            const float* g = oc.grad();
            float* dx = xc.grad();
            const std::size_t n2 = xc.numel();
            for (std::size_t i = 0; i < n2; ++i) dx[i] += g[i];
        });
    }
    return out;
}

} // namespace icvp
