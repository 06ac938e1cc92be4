#pragma once

#include <cassert>
#include <span>
#include <vector>

#include "docdet/grid.hpp"

namespace docdet {

/// Batch of feature maps stored channel-major: [channel][sample][row][column].
/// Each channel is one contiguous run of batch * height * width values.
template <typename T>
struct Tensor {
    int channels = 0;
    int batch = 0;
    int height = 0;
    int width = 0;
    std::vector<T> data;

    Tensor() = default;
    Tensor(int c, int n, int h, int w, T fill = T(0))
        : channels(c), batch(n), height(h), width(w), data(static_cast<size_t>(c) * n * h * w, fill) {}

    size_t plane() const { return static_cast<size_t>(height) * width; }
    size_t channel_size() const { return static_cast<size_t>(batch) * plane(); }
    size_t size() const { return data.size(); }
    bool same_shape(const Tensor& o) const {
        return channels == o.channels && batch == o.batch && height == o.height && width == o.width;
    }

    T* channel(int c) { return data.data() + c * channel_size(); }
    const T* channel(int c) const { return data.data() + c * channel_size(); }
    T* plane(int c, int n) { return channel(c) + n * plane(); }
    const T* plane(int c, int n) const { return channel(c) + n * plane(); }
    T& at(int c, int n, int y, int x) { return plane(c, n)[static_cast<size_t>(y) * width + x]; }
    const T& at(int c, int n, int y, int x) const { return plane(c, n)[static_cast<size_t>(y) * width + x]; }

    friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// One-channel batch from equally sized images.
template <typename T>
Tensor<T> batch_from_images(std::span<const Image> images);

/// Channel `c` of sample `n` as an image.
template <typename T>
Image plane_to_image(const Tensor<T>& t, int c, int n);

/// Copies sample `n` out of a batch.
template <typename T>
Tensor<T> sample_of(const Tensor<T>& t, int n);

template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& t) {
    Tensor<To> out;
    out.channels = t.channels;
    out.batch = t.batch;
    out.height = t.height;
    out.width = t.width;
    out.data.assign(t.data.begin(), t.data.end());
    return out;
}

}  // namespace docdet
