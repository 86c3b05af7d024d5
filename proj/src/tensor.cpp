#include "icvp/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace icvp {

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t shape_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int e : shape) {
        if (e <= 0) throw std::invalid_argument("tensor extent must be positive, got shape " + shape_str(shape));
        n *= static_cast<std::size_t>(e);
    }
    return n;
}

Tensor Tensor::zeros(std::vector<int> shape) {
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->data.assign(shape_numel(shape), 0.0f);
    t.impl_->shape = std::move(shape);
    return t;
}

Tensor Tensor::full(std::vector<int> shape, float value) {
    Tensor t = zeros(std::move(shape));
    for (float& v : t.impl_->data) v = value;
    return t;
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<float> data) {
    if (shape_numel(shape) != data.size())
        throw std::invalid_argument("data length " + std::to_string(data.size()) +
                                    " does not match shape " + shape_str(shape));
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::move(data);
    return t;
}

Tensor Tensor::scalar(float value) { return from_data({1}, {value}); }

void Tensor::ensure_grad() {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0f);
}

void Tensor::zero_grad() {
    if (!impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0f);
}

Tensor Tensor::clone() const {
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->shape = impl_->shape;
    t.impl_->data = impl_->data;
    t.impl_->requires_grad = impl_->requires_grad;
    return t;
}

void Tensor::check_finite(const std::string& what) const {
    for (float v : impl_->data) {
        if (!std::isfinite(v))
            throw std::runtime_error("non-finite value in " + what);
    }
}

namespace autograd {

namespace {
struct Tape {
    std::vector<std::function<void()>> nodes;
    bool enabled = true;
};
Tape& tape() {
    static Tape t;
    return t;
}
} // namespace

bool enabled() { return tape().enabled; }
void set_enabled(bool b) { tape().enabled = b; }

void record(std::function<void()> backward_fn) {
    if (tape().enabled) tape().nodes.push_back(std::move(backward_fn));
}

std::size_t tape_size() { return tape().nodes.size(); }

void clear() { tape().nodes.clear(); }

void backward(Tensor& loss) {
    if (loss.numel() != 1)
        throw std::invalid_argument("backward expects a scalar loss, got shape " + shape_str(loss.shape()));
    loss.ensure_grad();
    loss.grad()[0] = 1.0f;
    auto& nodes = tape().nodes;
    for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) (*it)();
    nodes.clear();
}

} // namespace autograd

} // namespace icvp
