#include "icvp/blocks.hpp"

#include <cmath>
#include <stdexcept>

namespace icvp {

namespace {
int branch_width(int out_ch) { return (out_ch + 2) / 3; }
} // namespace

GammaBlock2d::GammaBlock2d(ParamStore& ps, const std::string& name, int in_ch, int out_ch, bool atrous_,
                           Rng& rng)
    : atrous(atrous_) {
    if (atrous) {
        const int bw = branch_width(out_ch);
        b1 = Conv2dLayer(ps, name + ".d1", in_ch, bw, 3, 1, 1, rng);
        b2 = Conv2dLayer(ps, name + ".d2", in_ch, bw, 3, 1, 2, rng);
        b3 = Conv2dLayer(ps, name + ".d3", in_ch, bw, 3, 1, 3, rng);
        psi = PsiNorm(ps, name + ".psi", 3 * bw);
        proj = Conv2dLayer(ps, name + ".proj", 3 * bw, out_ch, 1, 1, 1, rng);
    } else {
        plain = Conv2dLayer(ps, name + ".conv", in_ch, out_ch, 3, 1, 1, rng);
    }
}

Tensor GammaBlock2d::forward(const Tensor& x, bool train) const {
    if (!atrous) return plain.forward(x);
    Tensor cat = concat({b1.forward(x), b2.forward(x), b3.forward(x)}, 0);
    return proj.forward(psi.forward(cat, train));
}

GammaBlock3d::GammaBlock3d(ParamStore& ps, const std::string& name, int in_ch, int out_ch, bool atrous_,
                           Rng& rng)
    : atrous(atrous_) {
    if (atrous) {
        const int bw = branch_width(out_ch);
        b1 = Conv3dLayer(ps, name + ".d1", in_ch, bw, 3, {1, 1, 1}, {1, 1, 1}, rng);
        b2 = Conv3dLayer(ps, name + ".d2", in_ch, bw, 3, {1, 1, 1}, {1, 2, 2}, rng);
        b3 = Conv3dLayer(ps, name + ".d3", in_ch, bw, 3, {1, 1, 1}, {1, 3, 3}, rng);
        psi = PsiNorm(ps, name + ".psi", 3 * bw);
        proj = Conv3dLayer(ps, name + ".proj", 3 * bw, out_ch, 1, {1, 1, 1}, {1, 1, 1}, rng);
    } else {
        plain = Conv3dLayer(ps, name + ".conv", in_ch, out_ch, 3, {1, 1, 1}, {1, 1, 1}, rng);
    }
}

Tensor GammaBlock3d::forward(const Tensor& x, bool train) const {
    if (!atrous) return plain.forward(x);
    Tensor cat = concat({b1.forward(x), b2.forward(x), b3.forward(x)}, 0);
    return proj.forward(psi.forward(cat, train));
}

FusionBlock::FusionBlock(ParamStore& ps, const std::string& name, int v_ch, int f_ch, int width,
                         bool atrous, Rng& rng)
    : g3(ps, name + ".g3", v_ch, width, atrous, rng),
      psi(ps, name + ".psi", width),
      out(ps, name + ".phi", width, width, 3, {1, 1, 1}, rng) {
    if (f_ch > 0) g2.emplace(ps, name + ".g2", f_ch, width, atrous, rng);
}

Tensor FusionBlock::forward(const Tensor& v, const Tensor* f, bool train) const {
    Tensor s = g3.forward(v, train);
    if (f != nullptr) {
        if (!g2)
            throw std::invalid_argument("fusion block built without an image branch received a feature map");
        s = broadcast_sum(s, g2->forward(*f, train));
    }
    return out.forward(psi.forward(s, train), train);
}

long count_params(FusionMode mode, int c_v, int c_f, int c_out, int k) {
    if (c_v <= 0 || c_f < 0 || c_out <= 0 || k <= 0)
        throw std::invalid_argument("count_params: arguments must be positive (c_f may be zero)");
    const long k2 = static_cast<long>(k) * k;
    const long k3 = k2 * k;
    if (mode == FusionMode::kConcat) return static_cast<long>(c_out) * (c_v + c_f) * k3;
    return static_cast<long>(c_out) * c_v * k3 + static_cast<long>(c_out) * c_f * k2;
}

double verify_fusion_equivalence(const FusionCheckCase& c, std::uint32_t seed) {
    Rng rng(seed);
    const int pd = same_pad(c.k, 1);
    const int phw = same_pad(c.k, c.dilation_hw);
    const int d_out = conv_out_extent(c.d, c.k, c.stride, 1);
    const int h_out = conv_out_extent(c.h, c.k, c.stride, c.dilation_hw);
    const int w_out = conv_out_extent(c.w, c.k, c.stride, c.dilation_hw);
    if (d_out <= 0 || h_out <= 0 || w_out <= 0)
        throw std::invalid_argument("verify_fusion_equivalence: degenerate output extents");

    Tensor v = Tensor::zeros({c.c_v, c.d, c.h, c.w});
    Tensor f = Tensor::zeros({c.c_f, c.h, c.w});
    Tensor w_cat = Tensor::zeros({c.c_out, c.c_v + c.c_f, c.k, c.k, c.k});
    Tensor bias = Tensor::zeros({c.c_out});
    for (auto* t : {&v, &f, &w_cat, &bias})
        for (std::size_t i = 0; i < t->numel(); ++i) t->data()[i] = rng.uniform(-1.0f, 1.0f);

    // Reference route: direct loops over the concatenated volume. Feature
    // channels have no disparity extent, so every d tap (padding planes
    // included) reads the same f value; v channels are zero-padded in d.
    auto vcat_at = [&](int ch, int dd, int ii, int jj) -> double {
        if (ii < 0 || ii >= c.h || jj < 0 || jj >= c.w) return 0.0;
        if (ch < c.c_v) {
            if (dd < 0 || dd >= c.d) return 0.0;
            return v.data()[((static_cast<std::size_t>(ch) * c.d + dd) * c.h + ii) * c.w + jj];
        }
        return f.data()[(static_cast<std::size_t>(ch - c.c_v) * c.h + ii) * c.w + jj];
    };
    std::vector<double> ref(static_cast<std::size_t>(c.c_out) * d_out * h_out * w_out);
    std::size_t idx = 0;
    for (int co = 0; co < c.c_out; ++co)
        for (int od = 0; od < d_out; ++od)
            for (int oy = 0; oy < h_out; ++oy)
                for (int ox = 0; ox < w_out; ++ox) {
                    double acc = bias.data()[co];
                    for (int ch = 0; ch < c.c_v + c.c_f; ++ch)
                        for (int kd = 0; kd < c.k; ++kd)
                            for (int kh = 0; kh < c.k; ++kh)
                                for (int kw = 0; kw < c.k; ++kw)
                                    acc += static_cast<double>(
                                               w_cat.data()[(((static_cast<std::size_t>(co) * (c.c_v + c.c_f) + ch) *
                                                                  c.k +
                                                              kd) *
                                                                 c.k +
                                                             kh) *
                                                                c.k +
                                                            kw]) *
                                           vcat_at(ch, od * c.stride - pd + kd,
                                                   oy * c.stride - phw + kh * c.dilation_hw,
                                                   ox * c.stride - phw + kw * c.dilation_hw);
                    ref[idx++] = acc;
                }

    // Split route through the production ops: W_v keeps its disparity taps,
    // W_f collapses them by summation.
    Tensor w_v = Tensor::zeros({c.c_out, c.c_v, c.k, c.k, c.k});
    Tensor w_f = Tensor::zeros({c.c_out, c.c_f, c.k, c.k});
    for (int co = 0; co < c.c_out; ++co) {
        for (int ch = 0; ch < c.c_v; ++ch)
            for (int t = 0; t < c.k * c.k * c.k; ++t)
                w_v.data()[(static_cast<std::size_t>(co) * c.c_v + ch) * c.k * c.k * c.k + t] =
                    w_cat.data()[(static_cast<std::size_t>(co) * (c.c_v + c.c_f) + ch) * c.k * c.k * c.k + t];
        for (int ch = 0; ch < c.c_f; ++ch)
            for (int kh = 0; kh < c.k; ++kh)
                for (int kw = 0; kw < c.k; ++kw) {
                    double s = 0.0;
                    for (int kd = 0; kd < c.k; ++kd)
                        s += w_cat.data()[(((static_cast<std::size_t>(co) * (c.c_v + c.c_f) + c.c_v + ch) * c.k +
                                            kd) *
                                               c.k +
                                           kh) *
                                              c.k +
                                          kw];
                    w_f.data()[((static_cast<std::size_t>(co) * c.c_f + ch) * c.k + kh) * c.k + kw] =
                        static_cast<float>(s);
                }
    }
    autograd::NoGradGuard ng;
    Tensor out3 = conv3d(v, w_v, bias, {c.stride, c.stride, c.stride}, {1, c.dilation_hw, c.dilation_hw});
    Tensor out2 = c.c_f > 0 ? conv2d(f, w_f, Tensor(), c.stride, c.dilation_hw) : Tensor();

    double worst = 0.0;
    idx = 0;
    const std::size_t plane = static_cast<std::size_t>(h_out) * w_out;
    for (int co = 0; co < c.c_out; ++co)
        for (int od = 0; od < d_out; ++od)
            for (std::size_t i = 0; i < plane; ++i) {
                double got = out3.data()[(static_cast<std::size_t>(co) * d_out + od) * plane + i];
                if (c.c_f > 0) got += out2.data()[static_cast<std::size_t>(co) * plane + i];
                worst = std::max(worst, std::abs(got - ref[idx++]));
            }
    return worst;
}

double fusion_equivalence_sweep(int trials, std::uint32_t seed, bool include_dilated) {
    Rng rng(seed);
    double worst = 0.0;
    for (int t = 0; t < trials; ++t) {
        FusionCheckCase c;
        c.c_v = rng.uniform_int(1, 8);
        c.c_f = rng.uniform_int(1, 8);
        c.c_out = rng.uniform_int(1, 8);
        c.k = rng.bernoulli(0.75f) ? 3 : 1;
        c.stride = rng.bernoulli(0.5f) ? 1 : 2;
        c.dilation_hw = (include_dilated && c.k == 3) ? rng.uniform_int(1, 3) : 1;
        c.d = rng.uniform_int(3, 8);
        c.h = rng.uniform_int(6, 12);
        c.w = c.h;
        worst = std::max(worst, verify_fusion_equivalence(c, rng.next_u32()));
    }
    return worst;
}

} // namespace icvp
