#include "lslp/tensor.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>

#include "lslp/error.hpp"

namespace lslp {

std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ')';
    return os.str();
}

namespace {

void check_shape(const Shape& shape) {
    for (auto d : shape)
        if (d == 0) throw ShapeError("tensor dimension must be positive, got " + shape_string(shape));
}

}  // namespace

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (shape_size(shape_) != data_.size())
        throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                         shape_string(shape_));
}

Tensor Tensor::scalar(float value) { return Tensor(Shape{1}, std::vector<float>{value}); }

float Tensor::item() const {
    if (data_.size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_string(shape_));
    return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

void Tensor::fill(float value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
    for (float v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

namespace {

constexpr std::array<char, 4> kMagic{'L', 'S', 'L', 'P'};
constexpr std::uint8_t kVersion = 1;
constexpr std::uint8_t kDtypeF32 = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
    const char bytes[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                           static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    out.write(bytes, 4);
}

std::uint32_t get_u32(std::istream& in) {
    unsigned char bytes[4];
    in.read(reinterpret_cast<char*>(bytes), 4);
    if (!in) throw DataError("truncated LSLP header");
    return std::uint32_t{bytes[0]} | (std::uint32_t{bytes[1]} << 8) | (std::uint32_t{bytes[2]} << 16) |
           (std::uint32_t{bytes[3]} << 24);
}

std::uint8_t get_u8(std::istream& in) {
    char c = 0;
    in.read(&c, 1);
    if (!in) throw DataError("truncated LSLP header");
    return static_cast<std::uint8_t>(c);
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& tensor) {
    if (tensor.rank() == 0 || tensor.rank() > 255) throw ShapeError("LSLP supports rank 1..255");
    out.write(kMagic.data(), kMagic.size());
    const char header[3] = {static_cast<char>(kVersion), static_cast<char>(kDtypeF32),
                            static_cast<char>(tensor.rank())};
    out.write(header, 3);
    for (auto d : tensor.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : tensor.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
    if (!out) throw DataError("failed writing LSLP tensor");
}

Tensor read_tensor(std::istream& in) {
    std::array<char, 4> magic{};
    in.read(magic.data(), magic.size());
    if (!in || magic != kMagic) throw DataError("bad LSLP magic");
    if (auto v = get_u8(in); v != kVersion) throw DataError("unsupported LSLP version " + std::to_string(v));
    if (auto t = get_u8(in); t != kDtypeF32) throw DataError("unsupported LSLP dtype " + std::to_string(t));
    const auto rank = get_u8(in);
    if (rank == 0) throw DataError("LSLP rank must be positive");
    Shape shape(rank);
    for (auto& d : shape) {
        d = get_u32(in);
        if (d == 0) throw DataError("LSLP dimension must be positive");
    }
    std::vector<float> data(shape_size(shape));
    for (auto& v : data) v = std::bit_cast<float>(get_u32(in));
    return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& tensor) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + path.string() + " for writing");
    write_tensor(out, tensor);
}

Tensor load_tensor(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    try {
        return read_tensor(in);
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

}  // namespace lslp
