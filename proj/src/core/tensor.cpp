#include "core/tensor.hpp"

#include <cmath>
#include <sstream>

namespace mapkit {

int64_t shape_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d < 0) throw std::invalid_argument("negative tensor dimension");
        n *= d;
    }
    return n;
}

std::string shape_to_string(const std::vector<int64_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

Tensor::Tensor(std::vector<int64_t> shape, double fill)
    : shape_(std::move(shape)), data_(static_cast<size_t>(shape_numel(shape_)), fill) {}

Tensor::Tensor(std::vector<int64_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != static_cast<int64_t>(data_.size()))
        throw std::invalid_argument("tensor data size " + std::to_string(data_.size()) +
                                    " does not match shape " + shape_to_string(shape_));
}

int64_t Tensor::index(std::initializer_list<int64_t> idx) const {
    if (idx.size() != shape_.size()) throw std::invalid_argument("index rank mismatch");
    int64_t lin = 0;
    size_t i = 0;
    for (int64_t v : idx) {
        if (v < 0 || v >= shape_[i]) throw std::out_of_range("tensor index out of range");
        lin = lin * shape_[i] + v;
        ++i;
    }
    return lin;
}

Tensor Tensor::reshaped(std::vector<int64_t> new_shape) const {
    if (shape_numel(new_shape) != numel())
        throw std::invalid_argument("reshape " + shape_to_string(shape_) + " -> " +
                                    shape_to_string(new_shape) + " changes element count");
    Tensor out;
    out.shape_ = std::move(new_shape);
    out.data_ = data_;
    return out;
}

std::string Tensor::shape_str() const { return shape_to_string(shape_); }

double Tensor::max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::fabs(v));
    return m;
}

double Tensor::max_abs_diff(const Tensor& o) const {
    if (!same_shape(o)) throw std::invalid_argument("max_abs_diff shape mismatch");
    double m = 0.0;
    for (size_t i = 0; i < data_.size(); ++i) m = std::max(m, std::fabs(data_[i] - o.data_[i]));
    return m;
}

}  // namespace mapkit
