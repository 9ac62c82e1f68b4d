#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "difforge/class_mask.hpp"
#include "difforge/corpus.hpp"

namespace difforge::cli {

namespace fs = std::filesystem;
using nlohmann::json;

/// A referenced input file or directory does not exist or is unusable.
class InputError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

json read_json_file(const fs::path& path);
void write_json_file(const fs::path& path, const json& j);
void write_text_file(const fs::path& path, const std::string& text);

void require_exists(const fs::path& path, const std::string& what);
std::vector<corpus::SliceRecord> read_corpus(const fs::path& dir);

/// Masks from either a corpus directory or a mask set written by
/// write_mask_set.
std::vector<ClassMask> read_mask_set(const fs::path& dir);
void write_mask_set(const fs::path& dir, const std::vector<ClassMask>& masks, const json& per_mask = json::array());

/// Hash of a mask set alone, in the same format as corpus hashes.
std::string mask_set_hash(const std::vector<ClassMask>& masks);

void write_loss_csv(const fs::path& path, const std::vector<double>& curve);

/// Up to `limit` image/mask preview pairs.
void write_previews(const fs::path& dir, const std::vector<corpus::SliceRecord>& records, std::size_t limit, const std::string& stem);
void write_mask_previews(const fs::path& dir, const std::vector<ClassMask>& masks, std::size_t limit, const std::string& stem);

}  // namespace difforge::cli
