#pragma once

#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace starmt {

// All internal numerics run in double; file formats that pin float32
// convert at the I/O boundary.
using real = double;

class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        data_.assign(static_cast<size_t>(count(shape_)), 0.0);
    }

    Tensor(std::vector<int> shape, std::vector<real> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (static_cast<long>(data_.size()) != count(shape_))
            throw std::invalid_argument("Tensor: data size does not match shape");
    }

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<int> shape, real v) {
        Tensor t(std::move(shape));
        t.fill(v);
        return t;
    }

    static Tensor scalar(real v) { return Tensor({1}, {v}); }

    const std::vector<int>& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
    long numel() const { return static_cast<long>(data_.size()); }
    bool empty() const { return data_.empty(); }

    real* data() { return data_.data(); }
    const real* data() const { return data_.data(); }
    std::vector<real>& vec() { return data_; }
    const std::vector<real>& vec() const { return data_; }

    real& operator[](long i) { return data_[static_cast<size_t>(i)]; }
    real operator[](long i) const { return data_[static_cast<size_t>(i)]; }

    real& at(int a) { return data_[static_cast<size_t>(a)]; }
    real& at(int a, int b) { return data_[static_cast<size_t>(a) * shape_[1] + b]; }
    real& at(int a, int b, int c) {
        return data_[(static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c];
    }
    real& at(int a, int b, int c, int d) {
        return data_[((static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
    }
    real at(int a) const { return data_[static_cast<size_t>(a)]; }
    real at(int a, int b) const { return data_[static_cast<size_t>(a) * shape_[1] + b]; }
    real at(int a, int b, int c) const {
        return data_[(static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c];
    }
    real at(int a, int b, int c, int d) const {
        return data_[((static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    void fill(real v) {
        for (auto& x : data_) x = v;
    }

    void add_inplace(const Tensor& o, real scale = 1.0) {
        if (!same_shape(o)) throw std::invalid_argument("Tensor::add_inplace: shape mismatch");
        for (size_t i = 0; i < data_.size(); ++i) data_[i] += scale * o.data_[i];
    }

    void scale_inplace(real s) {
        for (auto& x : data_) x *= s;
    }

    static long count(const std::vector<int>& shape) {
        long n = 1;
        for (int d : shape) {
            if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
            n *= d;
        }
        return n;
    }

    static std::string shape_str(const std::vector<int>& shape) {
        std::string s = "[";
        for (size_t i = 0; i < shape.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape[i]);
        }
        return s + "]";
    }

private:
    std::vector<int> shape_;
    std::vector<real> data_;
};

} // namespace starmt
