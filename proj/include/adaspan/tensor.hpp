#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace adaspan {

using Rng = std::mt19937_64;
using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), int64_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

// Dense n-dimensional tensor. A Tensor is a cheap handle: copies share the
// underlying value/grad buffers, which is what lets backward closures reach
// the same storage the forward pass produced.
template <typename T>
class Tensor {
    struct Storage {
        std::vector<T> value;
        std::vector<T> grad;  // same length as value iff requires_grad
        bool requires_grad = false;
    };

public:
    Tensor() = default;

    explicit Tensor(Shape shape, bool requires_grad = false)
        : shape_(std::move(shape)), st_(std::make_shared<Storage>()) {
        const int64_t n = shape_numel(shape_);
        if (n < 0) throw std::invalid_argument("tensor: negative shape");
        st_->value.assign(static_cast<size_t>(n), T(0));
        st_->requires_grad = requires_grad;
        if (requires_grad) st_->grad.assign(static_cast<size_t>(n), T(0));
    }

    static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false) {
        Tensor t(std::move(shape), requires_grad);
        if (static_cast<int64_t>(values.size()) != t.numel())
            throw std::invalid_argument("tensor: data length does not match shape");
        t.st_->value = std::move(values);
        return t;
    }

    static Tensor scalar(T v, bool requires_grad = false) {
        return from({1}, {v}, requires_grad);
    }

    static Tensor full(Shape shape, T v, bool requires_grad = false) {
        Tensor t(std::move(shape), requires_grad);
        std::fill(t.st_->value.begin(), t.st_->value.end(), v);
        return t;
    }

    bool defined() const { return static_cast<bool>(st_); }
    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int64_t dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
    int64_t numel() const { return static_cast<int64_t>(st_->value.size()); }
    bool requires_grad() const { return st_ && st_->requires_grad; }

    T* data() { return st_->value.data(); }
    const T* data() const { return st_->value.data(); }
    std::vector<T>& vec() { return st_->value; }
    const std::vector<T>& vec() const { return st_->value; }

    T* grad() { return st_->grad.data(); }
    const T* grad() const { return st_->grad.data(); }
    std::vector<T>& grad_vec() { return st_->grad; }
    const std::vector<T>& grad_vec() const { return st_->grad; }

    T item() const {
        if (numel() != 1) throw std::runtime_error("item: tensor is not scalar");
        return st_->value[0];
    }

    void zero_grad() {
        if (requires_grad()) std::fill(st_->grad.begin(), st_->grad.end(), T(0));
    }

    // Same storage viewed under a different shape (tensors are contiguous).
    Tensor reshaped(Shape shape) const {
        if (shape_numel(shape) != numel())
            throw std::invalid_argument("reshape: element count mismatch " + shape_str(shape_) +
                                        " -> " + shape_str(shape));
        Tensor t = *this;
        t.shape_ = std::move(shape);
        return t;
    }

    // Value-only copy, no grad buffer and no history. Used for layer caches.
    Tensor detached_copy() const {
        Tensor t;
        t.shape_ = shape_;
        t.st_ = std::make_shared<Storage>();
        t.st_->value = st_->value;
        return t;
    }

    bool same_storage(const Tensor& other) const { return st_ == other.st_; }

private:
    Shape shape_;
    std::shared_ptr<Storage> st_;
};

// Execution-ordered record of differentiable operations. Ops push a backward
// closure as they run, so the record is topological by construction; walking
// it in reverse visits each node exactly once.
//
// backward() zeroes the grads of recorded outputs (intermediates) before
// seeding, but never touches leaf grads: repeated backward calls accumulate
// additively into leaves until the caller zeroes them.
template <typename T>
class Tape {
public:
    bool active() const { return enabled_; }
    void set_enabled(bool e) { enabled_ = e; }

    void record(Tensor<T> output, std::function<void()> backward_fn) {
        nodes_.push_back(Node{std::move(output), std::move(backward_fn)});
    }

    size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    void backward(Tensor<T>& loss) {
        if (loss.numel() != 1) throw std::runtime_error("backward: loss must be scalar");
        if (!loss.requires_grad())
            throw std::runtime_error("backward: loss does not require grad (not produced under an active tape?)");
        for (auto& n : nodes_) n.output.zero_grad();
        loss.grad()[0] += T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            if (it->backward_fn) it->backward_fn();
        }
    }

private:
    struct Node {
        Tensor<T> output;
        std::function<void()> backward_fn;
    };
    std::vector<Node> nodes_;
    bool enabled_ = true;
};

// Disabled tape for inference paths: ops see an inactive tape and skip both
// recording and grad-buffer allocation.
template <typename T>
inline Tape<T> inference_tape() {
    Tape<T> t;
    t.set_enabled(false);
    return t;
}

}  // namespace adaspan
