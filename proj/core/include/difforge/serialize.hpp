#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>

#include "difforge/grid.hpp"

namespace difforge {

class FormatError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

// Grid blob layout, all little-endian:
//   "DFG1" | u32 rank | rank x u32 extent | numel x f64
void write_grid(std::ostream& os, const Grid& g);
Grid read_grid(std::istream& is);

void save_grid(const std::filesystem::path& path, const Grid& g);
Grid load_grid(const std::filesystem::path& path);

namespace le {
void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
void write_f64(std::ostream& os, double v);
std::uint32_t read_u32(std::istream& is);
std::uint64_t read_u64(std::istream& is);
double read_f64(std::istream& is);
}  // namespace le

}  // namespace difforge
