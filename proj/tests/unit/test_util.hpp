#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "docdet/grid.hpp"

namespace test {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("docdet_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary);
    out << s;
}

/// Flood-fill labels of a binary grid (8-connectivity), labels 1..n in raster order of first pixel.
template <typename Pred>
inline docdet::Grid<int> flood_labels(int w, int h, Pred on, int* count = nullptr) {
    docdet::Grid<int> lab(w, h, 0);
    int next = 0;
    std::vector<std::pair<int, int>> stack;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!on(x, y) || lab(x, y)) continue;
            lab(x, y) = ++next;
            stack.push_back({x, y});
            while (!stack.empty()) {
                const auto [cx, cy] = stack.back();
                stack.pop_back();
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int nx = cx + dx, ny = cy + dy;
                        if (nx < 0 || ny < 0 || nx >= w || ny >= h || lab(nx, ny) || !on(nx, ny)) continue;
                        lab(nx, ny) = next;
                        stack.push_back({nx, ny});
                    }
            }
        }
    if (count) *count = next;
    return lab;
}

/// Number of 8-connected blobs of pixels darker than `background`.
inline int count_blobs(const docdet::Image& img, float background) {
    int n = 0;
    flood_labels(img.width(), img.height(), [&](int x, int y) { return img(x, y) < background; }, &n);
    return n;
}

}  // namespace test
