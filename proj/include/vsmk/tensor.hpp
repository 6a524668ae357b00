#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "vsmk/errors.hpp"

namespace vsmk {

// Dense row-major tensor with value semantics. Shapes are checked at op
// boundaries; storage is always contiguous.
template <typename T>
class Tensor {
public:
    using Shape = std::vector<size_t>;

    Tensor() = default;

    explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(count(shape_), T(0)) {}

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != count(shape_))
            throw ShapeError("tensor data size " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str());
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor full(Shape shape, T v) {
        Tensor t(std::move(shape));
        for (auto& x : t.data_) x = v;
        return t;
    }

    static Tensor scalar(T v) { return Tensor({1}, {v}); }

    size_t rank() const { return shape_.size(); }
    size_t size() const { return data_.size(); }
    const Shape& shape() const { return shape_; }
    size_t shape(size_t axis) const { return shape_.at(axis); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    T& operator[](size_t i) { return data_[i]; }
    const T& operator[](size_t i) const { return data_[i]; }

    T& at(size_t i) { return data_[i]; }
    T& at(size_t i, size_t j) { return data_[i * shape_[1] + j]; }
    T& at(size_t i, size_t j, size_t k) { return data_[(i * shape_[1] + j) * shape_[2] + k]; }
    T& at(size_t i, size_t j, size_t k, size_t l) {
        return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
    }
    const T& at(size_t i) const { return data_[i]; }
    const T& at(size_t i, size_t j) const { return data_[i * shape_[1] + j]; }
    const T& at(size_t i, size_t j, size_t k) const {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    const T& at(size_t i, size_t j, size_t k, size_t l) const {
        return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
    }

    // Scalar extraction; requires size() == 1.
    T item() const {
        if (data_.size() != 1)
            throw ShapeError("item() on tensor of shape " + shape_str());
        return data_[0];
    }

    void fill(T v) {
        for (auto& x : data_) x = v;
    }

    Tensor reshaped(Shape shape) const {
        if (count(shape) != data_.size())
            throw ShapeError("cannot reshape " + shape_str() + " (" +
                             std::to_string(data_.size()) + " elements) to " + str(shape));
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = data_;
        return t;
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> t;
        std::vector<U> d(data_.size());
        for (size_t i = 0; i < data_.size(); ++i) d[i] = static_cast<U>(data_[i]);
        return Tensor<U>(shape_, std::move(d));
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    std::string shape_str() const { return str(shape_); }

    static std::string str(const Shape& s) {
        std::ostringstream os;
        os << "[";
        for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
        os << "]";
        return os.str();
    }

    static size_t count(const Shape& s) {
        size_t n = 1;
        for (size_t d : s) n *= d;
        return s.empty() ? 0 : n;
    }

private:
    Shape shape_;
    std::vector<T> data_;
};

template <typename T>
inline void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                         b.shape_str());
}

}  // namespace vsmk
