#include "image.hpp"

#include "common.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace sonarssl {

std::string hex64(std::uint64_t value) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << value;
    return os.str();
}

Image::Image(int c, int h, int w, float fill) : channels(c), height(h), width(w) {
    require_arg(c > 0 && h > 0 && w > 0, "image dimensions must be positive");
    data.assign(static_cast<std::size_t>(c) * h * w, fill);
}

Image Image::crop(int row, int col, int h, int w) const {
    require_arg(row >= 0 && col >= 0 && row + h <= height && col + w <= width,
                "crop window outside image");
    Image out(channels, h, w);
    for (int c = 0; c < channels; ++c) {
        for (int r = 0; r < h; ++r) {
            const float* src = &data[(static_cast<std::size_t>(c) * height + row + r) * width + col];
            std::copy(src, src + w, &out.at(c, r, 0));
        }
    }
    return out;
}

namespace {

std::string next_token(std::istream& in) {
    std::string tok;
    while (in) {
        int ch = in.peek();
        if (ch == '#') {
            std::string skip;
            std::getline(in, skip);
        } else if (std::isspace(ch)) {
            in.get();
        } else {
            break;
        }
    }
    in >> tok;
    return tok;
}

} // namespace

Image read_netpbm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorCode::io, "cannot open image " + path.string());
    const std::string magic = next_token(in);
    require(magic == "P5" || magic == "P6", ErrorCode::format,
            path.string() + ": unsupported netpbm magic '" + magic + "'");
    int width = 0, height = 0, maxval = 0;
    try {
        width = std::stoi(next_token(in));
        height = std::stoi(next_token(in));
        maxval = std::stoi(next_token(in));
    } catch (const std::exception&) {
        throw Error(ErrorCode::format, path.string() + ": malformed netpbm header");
    }
    require(width > 0 && height > 0 && maxval > 0 && maxval < 65536, ErrorCode::format,
            path.string() + ": bad netpbm header values");
    in.get(); // single whitespace before raster
    const int channels = magic == "P6" ? 3 : 1;
    const int bytes_per = maxval > 255 ? 2 : 1;
    std::vector<unsigned char> raw(static_cast<std::size_t>(width) * height * channels * bytes_per);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    require(in.gcount() == static_cast<std::streamsize>(raw.size()), ErrorCode::format,
            path.string() + ": truncated raster");

    Image img(channels, height, width);
    const float scale = 1.0f / static_cast<float>(maxval);
    std::size_t k = 0;
    for (int r = 0; r < height; ++r) {
        for (int col = 0; col < width; ++col) {
            for (int c = 0; c < channels; ++c) {
                unsigned v = raw[k++];
                if (bytes_per == 2) {
                    v = (v << 8) | raw[k++];
                }
                img.at(c, r, col) = static_cast<float>(v) * scale;
            }
        }
    }
    return img;
}

void write_netpbm(const std::filesystem::path& path, const Image& image) {
    require_arg(image.channels == 1 || image.channels == 3, "netpbm supports 1 or 3 channels");
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorCode::io, "cannot write image " + path.string());
    out << (image.channels == 3 ? "P6" : "P5") << '\n'
        << image.width << ' ' << image.height << "\n65535\n";
    std::vector<unsigned char> raw;
    raw.reserve(image.size() * 2);
    for (int r = 0; r < image.height; ++r) {
        for (int col = 0; col < image.width; ++col) {
            for (int c = 0; c < image.channels; ++c) {
                const float v = std::clamp(image.at(c, r, col), 0.0f, 1.0f);
                const auto q = static_cast<unsigned>(std::lround(v * 65535.0f));
                raw.push_back(static_cast<unsigned char>(q >> 8));
                raw.push_back(static_cast<unsigned char>(q & 0xff));
            }
        }
    }
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    require(static_cast<bool>(out), ErrorCode::io, "failed writing " + path.string());
}

} // namespace sonarssl
