#pragma once

#include <algorithm>
#include <cassert>
#include <cstdint>
#include <span>
#include <vector>

namespace docdet {

/// Dense row-major 2-D grid with value semantics.
template <typename T>
class Grid {
public:
    Grid() = default;
    Grid(int width, int height, T fill = T{})
        : width_(width), height_(height), data_(static_cast<size_t>(width) * height, fill) {
        assert(width >= 0 && height >= 0);
    }

    int width() const { return width_; }
    int height() const { return height_; }
    size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T& operator()(int x, int y) { return data_[static_cast<size_t>(y) * width_ + x]; }
    const T& operator()(int x, int y) const { return data_[static_cast<size_t>(y) * width_ + x]; }

    bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width_ && y < height_; }

    std::span<T> data() { return data_; }
    std::span<const T> data() const { return data_; }
    std::span<T> row(int y) { return {data_.data() + static_cast<size_t>(y) * width_, static_cast<size_t>(width_)}; }
    std::span<const T> row(int y) const {
        return {data_.data() + static_cast<size_t>(y) * width_, static_cast<size_t>(width_)};
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    T max_value() const { return data_.empty() ? T{} : *std::max_element(data_.begin(), data_.end()); }
    T min_value() const { return data_.empty() ? T{} : *std::min_element(data_.begin(), data_.end()); }

    friend bool operator==(const Grid&, const Grid&) = default;

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<T> data_;
};

/// Grayscale intensities in [0,1]; 1 is white paper, 0 is full ink.
using Image = Grid<float>;
/// Binary mask, 0 or 1.
using Mask = Grid<std::uint8_t>;

}  // namespace docdet
