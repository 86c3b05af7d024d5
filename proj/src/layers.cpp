#include "icvp/layers.hpp"

#include <cmath>

namespace icvp {

void kaiming_uniform_fill(Tensor& w, int fan_in, Rng& rng) {
    const float bound = std::sqrt(6.0f / (1.01f * static_cast<float>(fan_in)));
    float* d = w.data();
    const std::size_t n = w.numel();
    for (std::size_t i = 0; i < n; ++i) d[i] = rng.uniform(-bound, bound);
}

Conv2dLayer::Conv2dLayer(ParamStore& ps, const std::string& name, int in_ch, int out_ch, int k,
                         int stride_, int dilation_, Rng& rng)
    : stride(stride_), dilation(dilation_) {
    Tensor weight = Tensor::zeros({out_ch, in_ch, k, k});
    kaiming_uniform_fill(weight, in_ch * k * k, rng);
    w = ps.add_param(name + ".w", weight);
    b = ps.add_param(name + ".b", Tensor::zeros({out_ch}));
}

Conv3dLayer::Conv3dLayer(ParamStore& ps, const std::string& name, int in_ch, int out_ch, int k,
                         std::array<int, 3> stride_, std::array<int, 3> dilation_, Rng& rng)
    : stride(stride_), dilation(dilation_) {
    Tensor weight = Tensor::zeros({out_ch, in_ch, k, k, k});
    kaiming_uniform_fill(weight, in_ch * k * k * k, rng);
    w = ps.add_param(name + ".w", weight);
    b = ps.add_param(name + ".b", Tensor::zeros({out_ch}));
}

Deconv2dLayer::Deconv2dLayer(ParamStore& ps, const std::string& name, int in_ch, int out_ch, int k,
                             int stride_, Rng& rng)
    : stride(stride_) {
    Tensor weight = Tensor::zeros({in_ch, out_ch, k, k});
    kaiming_uniform_fill(weight, in_ch * k * k, rng);
    w = ps.add_param(name + ".w", weight);
    b = ps.add_param(name + ".b", Tensor::zeros({out_ch}));
}

Deconv3dLayer::Deconv3dLayer(ParamStore& ps, const std::string& name, int in_ch, int out_ch, int k,
                             std::array<int, 3> stride_, Rng& rng)
    : stride(stride_) {
    Tensor weight = Tensor::zeros({in_ch, out_ch, k, k, k});
    kaiming_uniform_fill(weight, in_ch * k * k * k, rng);
    w = ps.add_param(name + ".w", weight);
    b = ps.add_param(name + ".b", Tensor::zeros({out_ch}));
}

BatchNormLayer::BatchNormLayer(ParamStore& ps, const std::string& name, int channels) {
    gamma = ps.add_param(name + ".gamma", Tensor::full({channels}, 1.0f));
    beta = ps.add_param(name + ".beta", Tensor::zeros({channels}));
    run_mean = ps.add_buffer(name + ".run_mean", Tensor::zeros({channels}));
    run_var = ps.add_buffer(name + ".run_var", Tensor::full({channels}, 1.0f));
}

} // namespace icvp
