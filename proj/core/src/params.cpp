#include "memo/params.hpp"

#include <cmath>

namespace memo {

ad::Tensor glorot(Rng& rng, std::size_t rows, std::size_t cols) {
    const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::uniform_real_distribution<double> dist(-a, a);
    std::vector<double> v(rows * cols);
    for (auto& x : v) x = dist(rng);
    return ad::Tensor::matrix(rows, cols, std::move(v), true);
}

ad::Tensor glorot_vector(Rng& rng, std::size_t n, std::size_t fan_in, std::size_t fan_out) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-a, a);
    std::vector<double> v(n);
    for (auto& x : v) x = dist(rng);
    return ad::Tensor::vector(std::move(v), true);
}

ad::Tensor normal_matrix(Rng& rng, std::size_t rows, std::size_t cols, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> v(rows * cols);
    for (auto& x : v) x = dist(rng);
    return ad::Tensor::matrix(rows, cols, std::move(v), true);
}

ad::Tensor identity(std::size_t n, bool requires_grad) {
    std::vector<double> v(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
    return ad::Tensor::matrix(n, n, std::move(v), requires_grad);
}

ad::Tensor zeros_param(std::vector<std::size_t> shape) { return ad::Tensor::zeros(std::move(shape), true); }

}  // namespace memo
