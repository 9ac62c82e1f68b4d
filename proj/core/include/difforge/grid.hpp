#pragma once

#include <array>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace difforge {

class ShapeError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

/// Extents of a grid, outermost first. At most four (batch, channel, height, width).
class Shape {
   public:
    static constexpr std::size_t kMaxRank = 4;

    Shape() = default;
    Shape(std::initializer_list<std::size_t> extents);
    explicit Shape(std::span<const std::size_t> extents);

    std::size_t rank() const { return rank_; }
    std::size_t operator[](std::size_t axis) const { return extents_.at(axis); }
    std::size_t numel() const;
    std::span<const std::size_t> extents() const { return {extents_.data(), rank_}; }

    bool operator==(const Shape& other) const;
    bool operator!=(const Shape& other) const { return !(*this == other); }

    std::string str() const;

   private:
    std::array<std::size_t, kMaxRank> extents_{};
    std::size_t rank_ = 0;
};

/// Dense row-major array of doubles.
class Grid {
   public:
    Grid() = default;
    explicit Grid(Shape shape, double fill = 0.0);
    Grid(Shape shape, std::vector<double> data);

    static Grid zeros(Shape shape) { return Grid(shape, 0.0); }
    static Grid ones(Shape shape) { return Grid(shape, 1.0); }
    static Grid scalar(double v) { return Grid(Shape{1}, v); }

    const Shape& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    /// 4D accessor; the grid must be rank 4.
    double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w);
    double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const;

    /// Same data, different extents. Element count must match.
    Grid reshaped(Shape shape) const;

    bool all_finite() const;

    Grid& operator+=(const Grid& other);
    Grid& operator-=(const Grid& other);
    Grid& operator*=(double s);

   private:
    std::size_t offset4(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const;

    Shape shape_;
    std::vector<double> data_;
};

Grid operator+(Grid a, const Grid& b);
Grid operator-(Grid a, const Grid& b);
Grid operator*(Grid a, double s);
Grid operator*(double s, Grid a);

/// Throws ShapeError unless the two shapes are equal.
void require_same_shape(const Shape& a, const Shape& b, const char* what);

double sum(const Grid& g);
double mean(const Grid& g);

}  // namespace difforge
