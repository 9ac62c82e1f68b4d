#include "difforge/serialize.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <vector>

namespace difforge {
namespace le {

namespace {
template <typename T>
void put(std::ostream& os, T v) {
    std::array<char, sizeof(T)> buf;
    for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    os.write(buf.data(), buf.size());
}

template <typename T>
T get(std::istream& is) {
    std::array<unsigned char, sizeof(T)> buf;
    if (!is.read(reinterpret_cast<char*>(buf.data()), buf.size())) throw FormatError("unexpected end of stream");
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(buf[i]) << (8 * i);
    return v;
}
}  // namespace

void write_u32(std::ostream& os, std::uint32_t v) { put(os, v); }
void write_u64(std::ostream& os, std::uint64_t v) { put(os, v); }
void write_f64(std::ostream& os, double v) { put(os, std::bit_cast<std::uint64_t>(v)); }
std::uint32_t read_u32(std::istream& is) { return get<std::uint32_t>(is); }
std::uint64_t read_u64(std::istream& is) { return get<std::uint64_t>(is); }
double read_f64(std::istream& is) { return std::bit_cast<double>(get<std::uint64_t>(is)); }

}  // namespace le

namespace {
constexpr char kGridMagic[4] = {'D', 'F', 'G', '1'};
}

void write_grid(std::ostream& os, const Grid& g) {
    os.write(kGridMagic, 4);
    const auto extents = g.shape().extents();
    le::write_u32(os, static_cast<std::uint32_t>(extents.size()));
    for (std::size_t e : extents) le::write_u32(os, static_cast<std::uint32_t>(e));
    for (double v : g.values()) le::write_f64(os, v);
    if (!os) throw FormatError("failed writing grid");
}

Grid read_grid(std::istream& is) {
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kGridMagic, 4) != 0) throw FormatError("bad grid magic (expected DFG1)");
    const std::uint32_t rank = le::read_u32(is);
    if (rank > Shape::kMaxRank) throw FormatError("grid rank " + std::to_string(rank) + " exceeds 4");
    std::vector<std::size_t> extents(rank);
    for (auto& e : extents) e = le::read_u32(is);
    Shape shape(extents);
    std::vector<double> data(shape.numel());
    for (double& v : data) v = le::read_f64(is);
    return Grid(shape, std::move(data));
}

void save_grid(const std::filesystem::path& path, const Grid& g) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open " + path.string() + " for writing");
    write_grid(os, g);
}

Grid load_grid(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open " + path.string());
    return read_grid(is);
}

}  // namespace difforge
