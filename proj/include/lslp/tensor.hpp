#pragma once

#include <cstddef>
#include <filesystem>
#include <initializer_list>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace lslp {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of 32-bit floats.
///
/// Every dimension is positive and the element count always equals the
/// product of the shape. Tensors are plain values: copy to share, move to
/// hand over.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, float fill = 0.0f);
    Tensor(Shape shape, std::vector<float> data);

    static Tensor scalar(float value);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<float> data() { return data_; }
    std::span<const float> data() const { return data_; }
    float* raw() { return data_.data(); }
    const float* raw() const { return data_.data(); }

    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    // Row-major accessors for rank 2 and rank 3 tensors.
    float& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    float at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
    float& at(std::size_t a, std::size_t r, std::size_t c) {
        return data_[(a * shape_[1] + r) * shape_[2] + c];
    }
    float at(std::size_t a, std::size_t r, std::size_t c) const {
        return data_[(a * shape_[1] + r) * shape_[2] + c];
    }

    float item() const;
    Tensor reshaped(Shape shape) const;
    void fill(float value);
    bool all_finite() const;

    friend bool operator==(const Tensor& a, const Tensor& b) = default;

private:
    Shape shape_;
    std::vector<float> data_;
};

// LSLP binary format: "LSLP", version u8 = 1, dtype u8 (1 = f32), rank u8,
// rank x u32 LE dims, row-major f32 LE payload.
void write_tensor(std::ostream& out, const Tensor& tensor);
Tensor read_tensor(std::istream& in);
void save_tensor(const std::filesystem::path& path, const Tensor& tensor);
Tensor load_tensor(const std::filesystem::path& path);

}  // namespace lslp
