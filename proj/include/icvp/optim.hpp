#pragma once

#include "icvp/tensor.hpp"

#include <string>
#include <unordered_map>
#include <vector>

namespace icvp {

/// Named collection of model tensors. Trainable entries are updated by Adam;
/// non-trainable buffers (batch-norm running statistics) ride along so a
/// saved file fully restores eval-mode behaviour. Layers alias the stored
/// tensors, so in-place updates propagate everywhere.
class ParamStore {
public:
    struct Entry {
        std::string name;
        Tensor tensor;
        bool trainable;
    };

    Tensor add_param(const std::string& name, Tensor t);
    Tensor add_buffer(const std::string& name, Tensor t);

    const std::vector<Entry>& entries() const { return entries_; }
    Entry* find(const std::string& name);
    const Entry* find(const std::string& name) const;

    std::size_t num_trainable_scalars() const;
    void zero_grad();

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

struct AdamState {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    long step_count = 0;
    // one moment pair per trainable entry, matching parameter lengths
    std::vector<std::vector<float>> m, v;
};

/// Clips the global gradient norm to max_norm, then applies one Adam update
/// to every trainable parameter. Throws if a trainable parameter has no
/// gradient buffer. Returns the pre-clip global norm.
double adam_step(ParamStore& params, AdamState& state, float max_norm);

} // namespace icvp
