#pragma once

// Binary tensor container for fixture-driven tests: a fixed magic, the dtype
// code, the dimension list, then the row-major payload.

#include <cstdint>
#include <string>
#include <vector>

#include "ktune/param_space.hpp"

namespace ktune {

struct TensorFile {
    Dtype dtype{Dtype::f32};
    std::vector<std::int64_t> dims;
    // Payload in dtype precision; f32 data round-trips through the float
    // vector, f64 through the double vector. Exactly one is populated.
    std::vector<float> f32;
    std::vector<double> f64;

    std::int64_t element_count() const;
};

void write_tensor(const std::string& path, const TensorFile& t);
TensorFile read_tensor(const std::string& path);

}  // namespace ktune
