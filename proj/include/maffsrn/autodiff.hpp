#pragma once

#include <functional>
#include <string>
#include <vector>

#include "maffsrn/tensor.hpp"

namespace maffsrn {

// Ordered record of executed operators. Each forward op that runs with a tape
// pushes one closure that scatters the output gradient into its inputs.
// A tape is single-owner: recording and backward must not interleave across
// threads.
template <typename T>
class Tape {
public:
    void record(std::function<void()> backward_fn) {
        nodes_.push_back(std::move(backward_fn));
    }

    size_t size() const { return nodes_.size(); }

    // Replays every recorded operator exactly once, newest first. A tape is
    // consumed by this: running it again would re-propagate already
    // accumulated gradients, so that is an error until clear().
    void run_backward() {
        if (consumed_) throw error("tape already ran backward; clear() it before reuse");
        consumed_ = true;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    }

    void clear() {
        nodes_.clear();
        consumed_ = false;
    }

private:
    std::vector<std::function<void()>> nodes_;
    bool consumed_ = false;
};

// Seeds dLoss/dLoss = 1 and propagates through the tape. After this call
// every tensor that participated in the recorded graph holds dLoss/dTensor
// in its grad buffer (accumulated, so callers zero parameter grads between
// steps).
template <typename T>
void backward(Tape<T>& tape, Tensor<T>& loss) {
    if (loss.numel() != 1)
        throw shape_error("backward requires a scalar loss, got " + loss.shape().str());
    if (loss.tape() != &tape)
        throw error("loss tensor was not produced by an operator recorded on this tape");
    loss.grad()[0] += T(1);
    tape.run_backward();
}

}  // namespace maffsrn
