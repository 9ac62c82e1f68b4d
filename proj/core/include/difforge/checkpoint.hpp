#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "difforge/grid.hpp"

namespace difforge {

// Container layout, little-endian:
//   "DFCK" | u32 version | u64 header length | JSON header
//   | u32 tensor count | per tensor: u32 name length, name, DFG1 blob
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    nlohmann::json header = nlohmann::json::object();
    std::vector<std::pair<std::string, Grid>> tensors;

    void put(std::string name, Grid g);
    bool has(const std::string& name) const;
    /// Throws FormatError when missing.
    const Grid& tensor(const std::string& name) const;
};

void write_checkpoint(std::ostream& os, const Checkpoint& ck);
Checkpoint read_checkpoint(std::istream& is);
/// Writes to a temporary sibling and renames, so a crash never leaves a
/// truncated checkpoint behind.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace difforge
