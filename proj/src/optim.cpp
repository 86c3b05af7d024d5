#include "icvp/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace icvp {

Tensor ParamStore::add_param(const std::string& name, Tensor t) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    t.set_requires_grad(true);
    index_[name] = entries_.size();
    entries_.push_back({name, t, true});
    return t;
}

Tensor ParamStore::add_buffer(const std::string& name, Tensor t) {
    if (index_.count(name)) throw std::invalid_argument("duplicate buffer name: " + name);
    t.set_requires_grad(false);
    index_[name] = entries_.size();
    entries_.push_back({name, t, false});
    return t;
}

ParamStore::Entry* ParamStore::find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &entries_[it->second];
}

const ParamStore::Entry* ParamStore::find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &entries_[it->second];
}

std::size_t ParamStore::num_trainable_scalars() const {
    std::size_t n = 0;
    for (const Entry& e : entries_)
        if (e.trainable) n += e.tensor.numel();
    return n;
}

void ParamStore::zero_grad() {
    for (Entry& e : entries_)
        if (e.trainable) e.tensor.zero_grad();
}

double adam_step(ParamStore& params, AdamState& state, float max_norm) {
    std::vector<ParamStore::Entry*> train;
    for (auto& e : const_cast<std::vector<ParamStore::Entry>&>(params.entries()))
        if (e.trainable) train.push_back(&e);

    if (state.m.empty()) {
        state.m.resize(train.size());
        state.v.resize(train.size());
        for (std::size_t i = 0; i < train.size(); ++i) {
            state.m[i].assign(train[i]->tensor.numel(), 0.0f);
            state.v[i].assign(train[i]->tensor.numel(), 0.0f);
        }
    }
    if (state.m.size() != train.size())
        throw std::runtime_error("adam_step: optimizer state does not match parameter count");

    double norm_sq = 0.0;
    for (auto* e : train) {
        if (!e->tensor.has_grad())
            throw std::runtime_error("adam_step: missing gradient for parameter " + e->name);
        const float* g = e->tensor.grad();
        const std::size_t n = e->tensor.numel();
        for (std::size_t i = 0; i < n; ++i) norm_sq += static_cast<double>(g[i]) * g[i];
    }
    const double norm = std::sqrt(norm_sq);
    const float clip = (max_norm > 0.0f && norm > max_norm) ? static_cast<float>(max_norm / norm) : 1.0f;

    state.step_count += 1;
    const double bc1 = 1.0 - std::pow(static_cast<double>(state.beta1), static_cast<double>(state.step_count));
    const double bc2 = 1.0 - std::pow(static_cast<double>(state.beta2), static_cast<double>(state.step_count));

    for (std::size_t pi = 0; pi < train.size(); ++pi) {
        Tensor& t = train[pi]->tensor;
        if (state.m[pi].size() != t.numel())
            throw std::runtime_error("adam_step: moment buffer shape mismatch for " + train[pi]->name);
        float* p = t.data();
        const float* g = t.grad();
        float* m = state.m[pi].data();
        float* v = state.v[pi].data();
        const std::size_t n = t.numel();
        for (std::size_t i = 0; i < n; ++i) {
            const float gi = g[i] * clip;
            m[i] = state.beta1 * m[i] + (1.0f - state.beta1) * gi;
            v[i] = state.beta2 * v[i] + (1.0f - state.beta2) * gi * gi;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] -= static_cast<float>(state.lr * mhat / (std::sqrt(vhat) + state.eps));
        }
    }
    return norm;
}

} // namespace icvp
