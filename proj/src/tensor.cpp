#include "cgdl/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "cgdl/errors.hpp"

namespace cgdl {

namespace {
std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return shape.empty() ? 0 : n;
}
}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_product(shape_), 0.0) {
    for (std::size_t d : shape_)
        if (d == 0) throw contract_error("tensor shape has a zero dimension");
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    for (std::size_t d : shape_)
        if (d == 0) throw contract_error("tensor shape has a zero dimension");
    if (shape_product(shape_) != data_.size())
        throw contract_error("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str());
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::full(std::vector<std::size_t> shape, double v) {
    Tensor t(std::move(shape));
    t.fill(v);
    return t;
}

std::size_t Tensor::rows() const {
    if (shape_.size() <= 1) return shape_.empty() ? 0 : 1;
    std::size_t r = 1;
    for (std::size_t i = 0; i + 1 < shape_.size(); ++i) r *= shape_[i];
    return r;
}

std::size_t Tensor::cols() const {
    if (shape_.empty()) return 0;
    return shape_.back();
}

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

void Tensor::fill(double v) {
    for (double& x : data_) x = v;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "x" : "") << shape_[i];
    os << ']';
    return os.str();
}

}  // namespace cgdl
