#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace icvp {

/// Dense row-major float32 tensor with an optional gradient buffer.
/// Copying a Tensor is cheap and aliases the underlying storage.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape);
    static Tensor full(std::vector<int> shape, float value);
    static Tensor from_data(std::vector<int> shape, std::vector<float> data);
    static Tensor scalar(float value);

    bool defined() const { return impl_ != nullptr; }
    const std::vector<int>& shape() const { return impl_->shape; }
    int ndim() const { return static_cast<int>(impl_->shape.size()); }
    int dim(int i) const { return impl_->shape[static_cast<std::size_t>(i)]; }
    std::size_t numel() const { return impl_->data.size(); }

    float* data() { return impl_->data.data(); }
    const float* data() const { return impl_->data.data(); }
    std::vector<float>& vec() { return impl_->data; }
    const std::vector<float>& vec() const { return impl_->data; }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool b) { impl_->requires_grad = b; }

    bool has_grad() const { return !impl_->grad.empty(); }
    /// Allocates a zeroed gradient buffer if not present.
    void ensure_grad();
    float* grad() { return impl_->grad.data(); }
    const float* grad() const { return impl_->grad.data(); }
    std::vector<float>& grad_vec() { return impl_->grad; }
    void zero_grad();
    void drop_grad() { impl_->grad.clear(); }

    /// Deep copy of data; grad is not copied.
    Tensor clone() const;

    /// Throws if any element is NaN or infinite.
    void check_finite(const std::string& what) const;

    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

private:
    struct Impl {
        std::vector<int> shape;
        std::vector<float> data;
        std::vector<float> grad;
        bool requires_grad = false;
    };
    std::shared_ptr<Impl> impl_;
};

std::string shape_str(const std::vector<int>& shape);
std::size_t shape_numel(const std::vector<int>& shape);

namespace autograd {

/// Reverse-mode tape. Ops append nodes in execution order (which is a
/// topological order); backward() replays them once, in reverse.
bool enabled();
void set_enabled(bool b);
void record(std::function<void()> backward_fn);
std::size_t tape_size();
void clear();

/// Seeds d(loss)/d(loss) = 1 and accumulates gradients into every
/// requires_grad tensor reachable from the tape. Clears the tape.
void backward(Tensor& loss);

struct NoGradGuard {
    NoGradGuard() : prev_(enabled()) { set_enabled(false); }
    ~NoGradGuard() { set_enabled(prev_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

} // namespace autograd

} // namespace icvp
