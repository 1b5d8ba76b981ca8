#pragma once

// Dense row-major float64 tensors.
//
// Feature maps use the canonical layout H x W x C (rank 3, channels fastest).
// Nothing in the library accepts any other image layout.

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace texgraph {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor {
public:
    /// Empty placeholder (no shape, no data). Every public operation rejects it.
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    bool empty() const noexcept { return data_.empty(); }
    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    const double& operator[](std::size_t i) const noexcept { return data_[i]; }

    /// Bounds-checked multi-index access.
    double& at(std::initializer_list<std::size_t> index);
    double at(std::initializer_list<std::size_t> index) const;

    /// Value of a single-element tensor.
    double item() const;

    Tensor reshaped(Shape shape) const;

    Tensor& operator+=(const Tensor& other);
    void fill(double v);

    bool all_finite() const noexcept;

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    std::size_t offset(std::initializer_list<std::size_t> index) const;

    Shape shape_;
    std::vector<double> data_;
};

/// Extents of a rank-3 H x W x C feature map.
struct MapShape {
    std::size_t h = 0;
    std::size_t w = 0;
    std::size_t c = 0;

    std::size_t pixels() const noexcept { return h * w; }
    friend bool operator==(const MapShape&, const MapShape&) = default;
};

/// Throws DimensionError unless `t` is a rank-3 map.
MapShape map_shape(const Tensor& t);

/// Throws DimensionError naming both shapes if they differ.
void require_same_shape(const Tensor& a, const Tensor& b, const char* op);

}  // namespace texgraph
