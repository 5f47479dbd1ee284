#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "radcap/error.hpp"

namespace radcap {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) {
        if (d < 0) throw ShapeError("negative dimension");
        n *= d;
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ']';
    return os.str();
}

inline std::vector<std::int64_t> row_major_strides(const Shape& s) {
    std::vector<std::int64_t> st(s.size(), 1);
    for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i)
        st[i] = st[i + 1] * s[i + 1];
    return st;
}

template <typename T>
struct TensorData {
    Shape shape;
    std::vector<T> v;
    std::vector<T> g;        // allocated lazily, only when gradients flow
    bool requires_grad = false;

    std::int64_t numel() const { return static_cast<std::int64_t>(v.size()); }

    void ensure_grad() {
        if (g.size() != v.size()) g.assign(v.size(), T(0));
    }
};

// Value handle with shared storage. Copies alias the same buffer; use
// clone() for a deep copy. Gradients accumulate into g after backward().
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0)) {
        auto n = shape_numel(shape);
        d_ = std::make_shared<TensorData<T>>();
        d_->shape = std::move(shape);
        d_->v.assign(static_cast<std::size_t>(n), fill);
    }

    static Tensor from(Shape shape, std::vector<T> values) {
        if (shape_numel(shape) != static_cast<std::int64_t>(values.size()))
            throw ShapeError("from: value count does not match shape " + shape_str(shape));
        Tensor t;
        t.d_ = std::make_shared<TensorData<T>>();
        t.d_->shape = std::move(shape);
        t.d_->v = std::move(values);
        return t;
    }

    static Tensor scalar(T value) { return from({1}, {value}); }

    bool defined() const { return static_cast<bool>(d_); }
    const Shape& shape() const { return d_->shape; }
    int dim(int i) const { return d_->shape.at(static_cast<std::size_t>(i)); }
    int rank() const { return static_cast<int>(d_->shape.size()); }
    std::int64_t numel() const { return d_->numel(); }

    std::vector<T>& values() { return d_->v; }
    const std::vector<T>& values() const { return d_->v; }
    std::vector<T>& grad() {
        d_->ensure_grad();
        return d_->g;
    }
    const std::vector<T>& grad() const {
        d_->ensure_grad();
        return d_->g;
    }
    T* data() { return d_->v.data(); }
    const T* data() const { return d_->v.data(); }
    T* grad_data() {
        d_->ensure_grad();
        return d_->g.data();
    }

    bool requires_grad() const { return d_->requires_grad; }
    Tensor& set_requires_grad(bool b = true) {
        d_->requires_grad = b;
        return *this;
    }

    void zero_grad() {
        if (!d_->g.empty()) std::fill(d_->g.begin(), d_->g.end(), T(0));
    }

    T item() const {
        if (numel() != 1) throw ShapeError("item: tensor has " + std::to_string(numel()) + " elements");
        return d_->v[0];
    }

    Tensor clone() const {
        Tensor t;
        t.d_ = std::make_shared<TensorData<T>>(*d_);
        return t;
    }

    // Re-labels the shape in place (element count must match). Untracked;
    // use ops::reshape when gradients must flow through.
    Tensor& relabel(Shape shape) {
        if (shape_numel(shape) != numel())
            throw ShapeError("relabel: cannot reshape " + shape_str(d_->shape) + " to " + shape_str(shape));
        d_->shape = std::move(shape);
        return *this;
    }

    TensorData<T>* raw() const { return d_.get(); }
    std::shared_ptr<TensorData<T>> handle() const { return d_; }

private:
    std::shared_ptr<TensorData<T>> d_;
};

// Records backward closures in execution order; backward() replays them in
// reverse. Ops that participate in a tape mark their outputs tracked via
// requires_grad so downstream ops keep recording.
template <typename T>
class Tape {
public:
    void record(std::function<void()> fn) { steps_.push_back(std::move(fn)); }

    std::size_t size() const { return steps_.size(); }
    void clear() { steps_.clear(); }

    void backward(Tensor<T>& loss) {
        if (!loss.defined()) throw ValueError("backward: undefined loss");
        if (loss.numel() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
        if (!loss.requires_grad()) throw ValueError("backward: loss is detached from the tape");
        loss.grad()[0] = T(1);
        for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
    }

private:
    std::vector<std::function<void()>> steps_;
};

} // namespace radcap
