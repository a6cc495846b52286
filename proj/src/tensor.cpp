#include "crumb/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>

namespace crumb {

std::size_t shape_numel(std::span<const std::size_t> shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
    Tensor t;
    std::size_t n = shape_numel(shape);
    t.shape = std::move(shape);
    t.data.assign(n, 0.0f);
    return t;
}

Tensor Tensor::from(std::vector<std::size_t> shape, std::vector<float> values) {
    if (shape_numel(shape) != values.size())
        throw DataError("tensor: shape does not match value count");
    Tensor t;
    t.shape = std::move(shape);
    t.data = std::move(values);
    return t;
}

void Tensor::ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
}

void Tensor::zero_grad() {
    if (!grad.empty()) grad.assign(data.size(), 0.0f);
}

bool Tensor::all_finite() const {
    for (float v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

void Tensor::check_finite(const char* what) const {
    if (!all_finite()) throw NumericError(std::string("non-finite values in ") + what);
}

namespace {

constexpr char kMagic[4] = {'C', 'R', 'T', 'N'};

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
           static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
    if (t.shape.size() > 255) throw DataError("tensor: rank exceeds container limit");
    os.write(kMagic, 4);
    unsigned char rank = static_cast<unsigned char>(t.shape.size());
    os.write(reinterpret_cast<const char*>(&rank), 1);
    for (std::size_t e : t.shape) {
        if (e > std::numeric_limits<std::uint32_t>::max())
            throw DataError("tensor: extent exceeds u32");
        write_u32(os, static_cast<std::uint32_t>(e));
    }
    // f32 little-endian; host is little-endian here
    os.write(reinterpret_cast<const char*>(t.data.data()),
             static_cast<std::streamsize>(t.data.size() * sizeof(float)));
}

Tensor read_tensor(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw DataError("tensor: bad container magic");
    unsigned char rank = 0;
    is.read(reinterpret_cast<char*>(&rank), 1);
    std::vector<std::size_t> shape(rank);
    for (auto& e : shape) e = read_u32(is);
    if (!is) throw DataError("tensor: truncated header");
    Tensor t = Tensor::zeros(std::move(shape));
    is.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!is) throw DataError("tensor: truncated payload");
    return t;
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("tensor: cannot open for write: " + path.string());
    write_tensor(os, t);
    if (!os) throw DataError("tensor: write failed: " + path.string());
}

Tensor load_tensor(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("tensor: cannot open: " + path.string());
    return read_tensor(is);
}

}  // namespace crumb
