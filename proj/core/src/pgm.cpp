#include "difforge/pgm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "difforge/serialize.hpp"

namespace difforge::pgm {
namespace {

struct Header {
    std::size_t width = 0, height = 0, maxval = 0;
};

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open " + path.string() + " for writing");
    return os;
}

void skip_space_and_comments(std::istream& is) {
    for (;;) {
        int ch = is.peek();
        if (ch == '#') {
            std::string line;
            std::getline(is, line);
        } else if (std::isspace(ch)) {
            is.get();
        } else {
            return;
        }
    }
}

std::size_t read_number(std::istream& is, const std::filesystem::path& path) {
    skip_space_and_comments(is);
    std::size_t v = 0;
    if (!(is >> v)) throw FormatError("malformed PGM header in " + path.string());
    return v;
}

Header read_header(std::istream& is, const std::filesystem::path& path) {
    char magic[2];
    if (!is.read(magic, 2) || magic[0] != 'P' || magic[1] != '5') throw FormatError(path.string() + " is not a binary PGM (P5)");
    Header h;
    h.width = read_number(is, path);
    h.height = read_number(is, path);
    h.maxval = read_number(is, path);
    if (h.maxval == 0 || h.maxval > 65535) throw FormatError("PGM maxval out of range in " + path.string());
    is.get();  // single whitespace before raster
    return h;
}

}  // namespace

void write_mask(const std::filesystem::path& path, const ClassMask& mask) {
    auto os = open_out(path);
    os << "P5\n" << mask.width << ' ' << mask.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(mask.labels.data()), static_cast<std::streamsize>(mask.labels.size()));
    if (!os) throw FormatError("failed writing " + path.string());
}

ClassMask read_mask(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open " + path.string());
    const Header h = read_header(is, path);
    if (h.maxval > 255) throw FormatError("mask PGM must be 8-bit: " + path.string());
    ClassMask m(h.height, h.width);
    if (!is.read(reinterpret_cast<char*>(m.labels.data()), static_cast<std::streamsize>(m.labels.size())))
        throw FormatError("truncated PGM raster in " + path.string());
    return m;
}

void write_hu(const std::filesystem::path& path, const Grid& hu) {
    if (hu.shape().rank() != 2) throw ShapeError("write_hu expects an (H,W) grid");
    auto os = open_out(path);
    const std::size_t H = hu.shape()[0], W = hu.shape()[1];
    os << "P5\n" << W << ' ' << H << "\n2000\n";
    std::vector<unsigned char> raster(2 * H * W);
    for (std::size_t i = 0; i < H * W; ++i) {
        const long v = std::lround(std::clamp(hu[i], -1000.0, 1000.0) + 1000.0);
        raster[2 * i] = static_cast<unsigned char>((v >> 8) & 0xFF);
        raster[2 * i + 1] = static_cast<unsigned char>(v & 0xFF);
    }
    os.write(reinterpret_cast<const char*>(raster.data()), static_cast<std::streamsize>(raster.size()));
    if (!os) throw FormatError("failed writing " + path.string());
}

Grid read_hu(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open " + path.string());
    const Header h = read_header(is, path);
    Grid g(Shape{h.height, h.width});
    const std::size_t bytes = h.maxval > 255 ? 2 : 1;
    std::vector<unsigned char> raster(bytes * h.width * h.height);
    if (!is.read(reinterpret_cast<char*>(raster.data()), static_cast<std::streamsize>(raster.size())))
        throw FormatError("truncated PGM raster in " + path.string());
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double v = bytes == 2 ? static_cast<double>((raster[2 * i] << 8) | raster[2 * i + 1]) : static_cast<double>(raster[i]);
        g[i] = v - 1000.0;
    }
    return g;
}

void write_preview(const std::filesystem::path& path, const Grid& normalized) {
    const Shape s = normalized.shape();
    const std::size_t H = s[s.rank() - 2], W = s[s.rank() - 1];
    auto os = open_out(path);
    os << "P5\n" << W << ' ' << H << "\n255\n";
    std::vector<unsigned char> raster(H * W);
    for (std::size_t i = 0; i < H * W; ++i)
        raster[i] = static_cast<unsigned char>(std::lround(std::clamp((normalized[i] + 1.0) * 127.5, 0.0, 255.0)));
    os.write(reinterpret_cast<const char*>(raster.data()), static_cast<std::streamsize>(raster.size()));
}

}  // namespace difforge::pgm
