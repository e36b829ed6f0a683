#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace sonarssl {

/// Planar float image, channel-major (C x H x W).
struct Image {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<float> data;

    Image() = default;
    Image(int c, int h, int w, float fill = 0.0f);

    std::size_t plane_size() const { return static_cast<std::size_t>(height) * width; }
    std::size_t size() const { return data.size(); }

    float& at(int c, int r, int col) { return data[(static_cast<std::size_t>(c) * height + r) * width + col]; }
    float at(int c, int r, int col) const { return data[(static_cast<std::size_t>(c) * height + r) * width + col]; }

    std::span<float> plane(int c) { return {data.data() + c * plane_size(), plane_size()}; }
    std::span<const float> plane(int c) const { return {data.data() + c * plane_size(), plane_size()}; }

    Image crop(int row, int col, int h, int w) const;

    bool operator==(const Image&) const = default;
};

// Binary netpbm (P5 grayscale / P6 RGB), 8 or 16 bit. Values map to [0,1].
Image read_netpbm(const std::filesystem::path& path);
void write_netpbm(const std::filesystem::path& path, const Image& image);

} // namespace sonarssl
