#pragma once

#include "icvp/layers.hpp"

#include <optional>

namespace icvp {

/// Conv -> BatchNorm -> LeakyReLU(0.1).
struct Phi2d {
    Conv2dLayer conv;
    BatchNormLayer bn;

    Phi2d() = default;
    Phi2d(ParamStore& ps, const std::string& name, int in_ch, int out_ch, int k, int stride, Rng& rng,
          int dilation = 1)
        : conv(ps, name + ".conv", in_ch, out_ch, k, stride, dilation, rng), bn(ps, name + ".bn", out_ch) {}
    Tensor forward(const Tensor& x, bool train) const {
        return leaky_relu(bn.forward(conv.forward(x), train));
    }
    int out_channels() const { return conv.out_channels(); }
};

struct Phi3d {
    Conv3dLayer conv;
    BatchNormLayer bn;

    Phi3d() = default;
    Phi3d(ParamStore& ps, const std::string& name, int in_ch, int out_ch, int k, std::array<int, 3> stride,
          Rng& rng, std::array<int, 3> dilation = {1, 1, 1})
        : conv(ps, name + ".conv", in_ch, out_ch, k, stride, dilation, rng), bn(ps, name + ".bn", out_ch) {}
    Tensor forward(const Tensor& x, bool train) const {
        return leaky_relu(bn.forward(conv.forward(x), train));
    }
    int out_channels() const { return conv.out_channels(); }
};

/// Deconv -> BatchNorm -> LeakyReLU(0.1); the stride-2 upsampling block.
struct UpPhi2d {
    Deconv2dLayer up;
    BatchNormLayer bn;

    UpPhi2d() = default;
    UpPhi2d(ParamStore& ps, const std::string& name, int in_ch, int out_ch, Rng& rng)
        : up(ps, name + ".deconv", in_ch, out_ch, 3, 2, rng), bn(ps, name + ".bn", out_ch) {}
    Tensor forward(const Tensor& x, int out_h, int out_w, bool train) const {
        return leaky_relu(bn.forward(up.forward(x, out_h, out_w), train));
    }
};

struct UpPhi3d {
    Deconv3dLayer up;
    BatchNormLayer bn;

    UpPhi3d() = default;
    UpPhi3d(ParamStore& ps, const std::string& name, int in_ch, int out_ch, std::array<int, 3> stride, Rng& rng)
        : up(ps, name + ".deconv", in_ch, out_ch, 3, stride, rng), bn(ps, name + ".bn", out_ch) {}
    Tensor forward(const Tensor& x, std::array<int, 3> out_extent, bool train) const {
        return leaky_relu(bn.forward(up.forward(x, out_extent), train));
    }
};

/// BatchNorm -> LeakyReLU(0.1), the normalization applied after raw convs
/// and after broadcast sums.
struct PsiNorm {
    BatchNormLayer bn;

    PsiNorm() = default;
    PsiNorm(ParamStore& ps, const std::string& name, int channels) : bn(ps, name + ".bn", channels) {}
    Tensor forward(const Tensor& x, bool train) const { return leaky_relu(bn.forward(x, train)); }
};

/// Atrous pyramid: three parallel 3x3 stride-1 convs with dilations 1/2/3
/// (d axis kept at dilation 1 in 3D), channel-concatenated, normalized, and
/// projected by a bare 1x1 conv. The projection intentionally carries no
/// normalization or activation: the fusion applies them after the broadcast
/// sum. With atrous=false the whole block collapses to one plain 3x3 conv.
struct GammaBlock2d {
    bool atrous = true;
    Conv2dLayer b1, b2, b3;
    PsiNorm psi;
    Conv2dLayer proj;
    Conv2dLayer plain;

    GammaBlock2d() = default;
    GammaBlock2d(ParamStore& ps, const std::string& name, int in_ch, int out_ch, bool atrous, Rng& rng);
    Tensor forward(const Tensor& x, bool train) const;
    int out_channels() const { return atrous ? proj.out_channels() : plain.out_channels(); }
};

struct GammaBlock3d {
    bool atrous = true;
    Conv3dLayer b1, b2, b3;
    PsiNorm psi;
    Conv3dLayer proj;
    Conv3dLayer plain;

    GammaBlock3d() = default;
    GammaBlock3d(ParamStore& ps, const std::string& name, int in_ch, int out_ch, bool atrous, Rng& rng);
    Tensor forward(const Tensor& x, bool train) const;
    int out_channels() const { return atrous ? proj.out_channels() : plain.out_channels(); }
};

/// 2D/3D fusion: Phi3d_{3,1}(Psi(Gamma3d(v) + Gamma2d(f))). The broadcast
/// sum runs before normalization and activation. When built without an image
/// branch the 2D half is absent and the sum degenerates to Gamma3d(v).
struct FusionBlock {
    GammaBlock3d g3;
    std::optional<GammaBlock2d> g2;
    PsiNorm psi;
    Phi3d out;

    FusionBlock() = default;
    FusionBlock(ParamStore& ps, const std::string& name, int v_ch, int f_ch /* <=0: no image branch */,
                int width, bool atrous, Rng& rng);
    Tensor forward(const Tensor& v, const Tensor* f, bool train) const;
    int out_channels() const { return out.out_channels(); }
};

/// Learnable-scalar count of one fusion conv pair (bias excluded).
/// concat: C_out*(C_v+C_f)*k^3; broadcast: C_out*C_v*k^3 + C_out*C_f*k^2.
enum class FusionMode { kConcat, kBroadcast };
long count_params(FusionMode mode, int c_v, int c_f, int c_out, int k);

/// Numerical check of the concat-conv identity: a 3D convolution over the
/// channel-concatenation of v and (f replicated along every disparity plane
/// the kernel touches) equals conv3d(v; W_v) plus conv2d(f; W_f) broadcast
/// over disparity, where W_v is the first C_v input-channel block of the
/// concat weights and W_f sums the remaining block over its disparity taps.
/// The concat side is evaluated by a direct nested-loop reference that never
/// calls the production conv path; the bias lives wholly on the 3D side.
struct FusionCheckCase {
    int c_v = 4, c_f = 3, c_out = 2;
    int k = 3;
    int stride = 1;
    int dilation_hw = 1; // d-axis dilation stays 1, matching the atrous blocks
    int d = 6, h = 8, w = 8;
};
double verify_fusion_equivalence(const FusionCheckCase& c, std::uint32_t seed);

/// Randomized sweep; returns the worst deviation over `trials` cases drawn
/// within the given bounds (c_v,c_f,c_out <= 8, k in {1,3}, s in {1,2}).
double fusion_equivalence_sweep(int trials, std::uint32_t seed, bool include_dilated = true);

} // namespace icvp
