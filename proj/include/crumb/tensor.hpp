#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "crumb/common.hpp"

namespace crumb {

// Dense row-major float32 array with an optional same-length gradient buffer.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<float> data;
    std::vector<float> grad;  // empty, or data.size() entries

    Tensor() = default;

    static Tensor zeros(std::vector<std::size_t> shape);
    static Tensor from(std::vector<std::size_t> shape, std::vector<float> values);

    std::size_t numel() const { return data.size(); }
    bool has_grad() const { return !grad.empty(); }
    void ensure_grad();
    void zero_grad();

    bool all_finite() const;
    // throws NumericError naming `what` on NaN/Inf
    void check_finite(const char* what) const;
};

std::size_t shape_numel(std::span<const std::size_t> shape);

// Binary container: magic "CRTN", u8 rank, rank x u32 LE extents, f32 LE payload.
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);
void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

}  // namespace crumb
