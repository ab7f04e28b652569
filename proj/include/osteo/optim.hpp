#pragma once

#include <unordered_map>
#include <vector>

#include "osteo/tensor.hpp"

namespace osteo {

// SGD with momentum and weight decay:
//   v <- momentum*v + grad + weight_decay*param
//   param <- param - lr*v
// One state per learning-rate group; velocity buffers are keyed by parameter
// storage and created lazily on the first step.
template <typename S>
class SgdState {
  public:
    SgdState(S learning_rate, S momentum, S weight_decay)
        : lr_(learning_rate), momentum_(momentum), weight_decay_(weight_decay) {
        if (!(lr_ > S(0))) throw InputError("sgd: learning rate must be positive");
        if (momentum_ < S(0) || momentum_ >= S(1))
            throw InputError("sgd: momentum must be in [0,1)");
        if (weight_decay_ < S(0)) throw InputError("sgd: weight decay must be non-negative");
    }

    S learning_rate() const { return lr_; }
    S momentum() const { return momentum_; }
    S weight_decay() const { return weight_decay_; }

    // Applies one update to every parameter and zeroes its gradient.
    void step(std::vector<Tensor<S>>& params) {
        for (auto& p : params) {
            auto st = p.storage();
            if (st->grad.size() != st->data.size())
                throw StateError("sgd_step: parameter has no gradient");
            auto& v = velocity_[st.get()];
            if (v.size() != st->data.size()) v.assign(st->data.size(), S(0));
            for (std::size_t i = 0; i < st->data.size(); ++i) {
                v[i] = momentum_ * v[i] + st->grad[i] + weight_decay_ * st->data[i];
                st->data[i] -= lr_ * v[i];
                st->grad[i] = S(0);
            }
        }
    }

  private:
    S lr_, momentum_, weight_decay_;
    std::unordered_map<const TensorStorage<S>*, std::vector<S>> velocity_;
};

} // namespace osteo
