#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "memo/tensor.hpp"

namespace memo {

struct NamedTensor {
    std::string name;
    ad::Tensor tensor;
};

using ParamList = std::vector<NamedTensor>;

using Rng = std::mt19937_64;

// Trainable leaf with entries ~ U(-a, a), a = sqrt(6 / (fan_in + fan_out)).
ad::Tensor glorot(Rng& rng, std::size_t rows, std::size_t cols);
ad::Tensor glorot_vector(Rng& rng, std::size_t n, std::size_t fan_in, std::size_t fan_out);
ad::Tensor normal_matrix(Rng& rng, std::size_t rows, std::size_t cols, double stddev);
ad::Tensor identity(std::size_t n, bool requires_grad = true);
ad::Tensor zeros_param(std::vector<std::size_t> shape);

}  // namespace memo
