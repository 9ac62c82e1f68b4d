#include "difforge/grid.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace difforge {

Shape::Shape(std::initializer_list<std::size_t> extents) : Shape(std::span<const std::size_t>(extents.begin(), extents.size())) {}

Shape::Shape(std::span<const std::size_t> extents) {
    if (extents.size() > kMaxRank) throw ShapeError("grid rank exceeds 4");
    std::copy(extents.begin(), extents.end(), extents_.begin());
    rank_ = extents.size();
}

std::size_t Shape::numel() const {
    if (rank_ == 0) return 0;
    std::size_t n = 1;
    for (std::size_t i = 0; i < rank_; ++i) n *= extents_[i];
    return n;
}

bool Shape::operator==(const Shape& other) const {
    return rank_ == other.rank_ && std::equal(extents_.begin(), extents_.begin() + rank_, other.extents_.begin());
}

std::string Shape::str() const {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < rank_; ++i) os << (i ? "," : "") << extents_[i];
    os << ')';
    return os.str();
}

Grid::Grid(Shape shape, double fill) : shape_(shape), data_(shape.numel(), fill) {}

Grid::Grid(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.numel())
        throw ShapeError("grid data length " + std::to_string(data_.size()) + " does not match shape " + shape_.str());
}

std::size_t Grid::offset4(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return ((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
}

double& Grid::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) { return data_[offset4(n, c, h, w)]; }
double Grid::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const { return data_[offset4(n, c, h, w)]; }

Grid Grid::reshaped(Shape shape) const {
    if (shape.numel() != data_.size()) throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
    return Grid(shape, data_);
}

bool Grid::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Grid& Grid::operator+=(const Grid& other) {
    require_same_shape(shape_, other.shape_, "grid +=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
}

Grid& Grid::operator-=(const Grid& other) {
    require_same_shape(shape_, other.shape_, "grid -=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
    return *this;
}

Grid& Grid::operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
}

Grid operator+(Grid a, const Grid& b) { return a += b; }
Grid operator-(Grid a, const Grid& b) { return a -= b; }
Grid operator*(Grid a, double s) { return a *= s; }
Grid operator*(double s, Grid a) { return a *= s; }

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
    if (a != b) throw ShapeError(std::string(what) + ": shape mismatch " + a.str() + " vs " + b.str());
}

double sum(const Grid& g) { return std::accumulate(g.values().begin(), g.values().end(), 0.0); }

double mean(const Grid& g) { return g.empty() ? 0.0 : sum(g) / static_cast<double>(g.size()); }

}  // namespace difforge
