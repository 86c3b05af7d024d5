#pragma once

#include "icvp/ops.hpp"
#include "icvp/optim.hpp"
#include "icvp/rng.hpp"

#include <string>

namespace icvp {

/// He-uniform fill for a leaky-ReLU(0.1) network: U(-b, b) with
/// b = sqrt(6 / ((1 + 0.1^2) * fan_in)).
void kaiming_uniform_fill(Tensor& w, int fan_in, Rng& rng);

struct Conv2dLayer {
    Tensor w, b;
    int stride = 1, dilation = 1;

    Conv2dLayer() = default;
    Conv2dLayer(ParamStore& ps, const std::string& name, int in_ch, int out_ch, int k,
                int stride, int dilation, Rng& rng);
    Tensor forward(const Tensor& x) const { return conv2d(x, w, b, stride, dilation); }
    int out_channels() const { return w.dim(0); }
};

struct Conv3dLayer {
    Tensor w, b;
    std::array<int, 3> stride{1, 1, 1}, dilation{1, 1, 1};

    Conv3dLayer() = default;
    Conv3dLayer(ParamStore& ps, const std::string& name, int in_ch, int out_ch, int k,
                std::array<int, 3> stride, std::array<int, 3> dilation, Rng& rng);
    Tensor forward(const Tensor& x) const { return conv3d(x, w, b, stride, dilation); }
    int out_channels() const { return w.dim(0); }
};

struct Deconv2dLayer {
    Tensor w, b; // [Ci,Co,k,k]
    int stride = 2;

    Deconv2dLayer() = default;
    Deconv2dLayer(ParamStore& ps, const std::string& name, int in_ch, int out_ch, int k,
                  int stride, Rng& rng);
    Tensor forward(const Tensor& x, int out_h, int out_w) const {
        return deconv2d(x, w, b, stride, out_h, out_w);
    }
    int out_channels() const { return w.dim(1); }
};

struct Deconv3dLayer {
    Tensor w, b; // [Ci,Co,kd,kh,kw]
    std::array<int, 3> stride{2, 2, 2};

    Deconv3dLayer() = default;
    Deconv3dLayer(ParamStore& ps, const std::string& name, int in_ch, int out_ch, int k,
                  std::array<int, 3> stride, Rng& rng);
    Tensor forward(const Tensor& x, std::array<int, 3> out_extent) const {
        return deconv3d(x, w, b, stride, out_extent);
    }
    int out_channels() const { return w.dim(1); }
};

struct BatchNormLayer {
    Tensor gamma, beta, run_mean, run_var;

    BatchNormLayer() = default;
    BatchNormLayer(ParamStore& ps, const std::string& name, int channels);
    Tensor forward(const Tensor& x, bool train) const {
        return batchnorm(x, gamma, beta, run_mean, run_var, train);
    }
};

} // namespace icvp
