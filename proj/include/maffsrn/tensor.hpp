#pragma once

#include <cmath>
#include <cstring>
#include <memory>
#include <vector>

#include "maffsrn/core.hpp"

namespace maffsrn {

// Dense rank-4 NCHW tensor with value semantics over shared storage.
// Copies are cheap handles; the payload is freed when the last handle drops,
// which the activation-memory accounting relies on. The optional grad buffer
// is allocated on first accumulation and mirrors the data shape.
template <typename T>
class Tensor {
    struct Storage {
        Shape4 shape;
        std::vector<T> data;
        std::vector<T> grad;           // empty until a backward pass touches it
        const void* tape = nullptr;    // tape that produced this tensor, if any

        explicit Storage(Shape4 s) : shape(s), data(static_cast<size_t>(s.numel())) {
            MemoryMeter::instance().on_alloc(payload_bytes());
        }
        ~Storage() { MemoryMeter::instance().on_free(payload_bytes()); }
        Storage(const Storage&) = delete;
        Storage& operator=(const Storage&) = delete;
        int64_t payload_bytes() const { return shape.numel() * static_cast<int64_t>(sizeof(T)); }
    };

public:
    Tensor() = default;

    explicit Tensor(Shape4 shape) {
        if (shape.n < 1 || shape.c < 1 || shape.h < 1 || shape.w < 1)
            throw shape_error("tensor extents must be positive, got " + shape.str());
        s_ = std::make_shared<Storage>(shape);
    }

    static Tensor zeros(Shape4 shape) { return Tensor(shape); }

    static Tensor full(Shape4 shape, T value) {
        Tensor t(shape);
        std::fill(t.data(), t.data() + t.numel(), value);
        return t;
    }

    static Tensor from_data(Shape4 shape, std::vector<T> values) {
        Tensor t(shape);
        if (static_cast<int64_t>(values.size()) != shape.numel())
            throw shape_error("data length " + std::to_string(values.size()) +
                              " does not match shape " + shape.str());
        std::copy(values.begin(), values.end(), t.data());
        return t;
    }

    static Tensor scalar(T value) { return full({1, 1, 1, 1}, value); }

    bool valid() const { return static_cast<bool>(s_); }
    void reset() { s_.reset(); }

    const Shape4& shape() const { return check().shape; }
    int64_t numel() const { return check().shape.numel(); }

    T* data() { return check().data.data(); }
    const T* data() const { return check().data.data(); }

    T& at(int64_t n, int64_t c, int64_t h, int64_t w) {
        return check().data[flat_index(shape(), n, c, h, w)];
    }
    T at(int64_t n, int64_t c, int64_t h, int64_t w) const {
        return check().data[flat_index(shape(), n, c, h, w)];
    }

    T item() const {
        if (numel() != 1) throw shape_error("item() on non-scalar tensor " + shape().str());
        return check().data[0];
    }

    bool has_grad() const { return valid() && !s_->grad.empty(); }

    T* grad() {
        auto& st = check();
        if (st.grad.empty()) st.grad.assign(st.data.size(), T(0));
        return st.grad.data();
    }
    const T* grad() const {
        if (!has_grad()) throw error("tensor has no gradient");
        return s_->grad.data();
    }

    void zero_grad() {
        if (has_grad()) std::fill(s_->grad.begin(), s_->grad.end(), T(0));
    }

    void set_tape(const void* tape) { check().tape = tape; }
    const void* tape() const { return check().tape; }

    // Identity of the underlying storage; two handles to one payload compare equal.
    bool same_storage(const Tensor& other) const { return s_ == other.s_; }

    Tensor clone() const {
        Tensor t(shape());
        std::memcpy(t.data(), data(), sizeof(T) * static_cast<size_t>(numel()));
        return t;
    }

private:
    Storage& check() {
        if (!s_) throw error("use of empty tensor");
        return *s_;
    }
    const Storage& check() const {
        if (!s_) throw error("use of empty tensor");
        return *s_;
    }

    std::shared_ptr<Storage> s_;
};

// Operators call this on their outputs: a non-finite value anywhere is a
// hard error rather than a silently propagating NaN.
template <typename T>
void ensure_finite(const Tensor<T>& t, const char* op) {
    const T* p = t.data();
    int64_t n = t.numel();
    for (int64_t i = 0; i < n; ++i) {
        if (!std::isfinite(static_cast<double>(p[i])))
            throw numeric_error(std::string(op) + " produced a non-finite value at flat index " +
                                std::to_string(i));
    }
}

}  // namespace maffsrn
