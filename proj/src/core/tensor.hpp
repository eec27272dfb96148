#pragma once

#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace mapkit {

/// Dense row-major tensor of doubles. The shape is explicit; data is a flat
/// buffer. All training-time math in this project runs in double precision so
/// that the analytic tolerances in the test suites hold without fp32 noise.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int64_t> shape, double fill = 0.0);
    Tensor(std::vector<int64_t> shape, std::vector<double> data);

    static Tensor scalar(double v) { return Tensor({1}, {v}); }
    static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_); }

    const std::vector<int64_t>& shape() const { return shape_; }
    int64_t dim(size_t i) const { return shape_.at(i); }
    size_t rank() const { return shape_.size(); }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    /// Linear index into an NCHW / row-major layout.
    int64_t index(std::initializer_list<int64_t> idx) const;
    double at(std::initializer_list<int64_t> idx) const { return data_[static_cast<size_t>(index(idx))]; }
    double& at(std::initializer_list<int64_t> idx) { return data_[static_cast<size_t>(index(idx))]; }

    Tensor reshaped(std::vector<int64_t> new_shape) const;

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
    std::string shape_str() const;

    double max_abs() const;
    double max_abs_diff(const Tensor& o) const;

private:
    std::vector<int64_t> shape_;
    std::vector<double> data_;
};

int64_t shape_numel(const std::vector<int64_t>& shape);
std::string shape_to_string(const std::vector<int64_t>& shape);

}  // namespace mapkit
