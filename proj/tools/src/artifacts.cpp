#include "artifacts.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "difforge/pgm.hpp"
#include "difforge/serialize.hpp"
#include "difforge/trainer.hpp"

namespace difforge::cli {

namespace {
std::string indexed(std::size_t i, const char* ext) {
    char name[32];
    std::snprintf(name, sizeof name, "%05zu.%s", i, ext);
    return name;
}

Grid mask_as_image(const ClassMask& m) {
    Grid g(Shape{m.height, m.width});
    const double top = static_cast<double>(tissue::kNumClasses - 1);
    for (std::size_t i = 0; i < m.size(); ++i) g[i] = 2.0 * m.labels[i] / top - 1.0;
    return g;
}
}  // namespace

json read_json_file(const fs::path& path) {
    require_exists(path, "file");
    std::ifstream is(path);
    if (!is) throw InputError("cannot open " + path.string());
    try {
        return json::parse(is);
    } catch (const json::parse_error& e) {
        throw InputError(path.string() + ": invalid JSON: " + e.what());
    }
}

void write_json_file(const fs::path& path, const json& j) { write_text_file(path, j.dump(2) + "\n"); }

void write_text_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    os << text;
    if (!os) throw std::runtime_error("failed writing " + path.string());
}

void require_exists(const fs::path& path, const std::string& what) {
    if (path.empty()) throw InputError(what + " path is required");
    if (!fs::exists(path)) throw InputError(what + " not found: " + path.string());
}

std::vector<corpus::SliceRecord> read_corpus(const fs::path& dir) {
    require_exists(dir / "corpus.json", "corpus");
    try {
        return corpus::load_corpus(dir);
    } catch (const FormatError& e) {
        throw InputError(e.what());
    }
}

std::vector<ClassMask> read_mask_set(const fs::path& dir) {
    if (fs::exists(dir / "corpus.json")) return corpus::masks_of(read_corpus(dir));
    const json index = read_json_file(dir / "masks.json");
    std::vector<ClassMask> out;
    try {
        for (const auto& e : index.at("masks")) {
            const fs::path p = dir / e.at("file").get<std::string>();
            require_exists(p, "mask");
            out.push_back(pgm::read_mask(p));
        }
    } catch (const json::exception& e) {
        throw InputError((dir / "masks.json").string() + ": " + e.what());
    } catch (const FormatError& e) {
        throw InputError(e.what());
    }
    return out;
}

void write_mask_set(const fs::path& dir, const std::vector<ClassMask>& masks, const json& per_mask) {
    fs::create_directories(dir);
    json entries = json::array();
    for (std::size_t i = 0; i < masks.size(); ++i) {
        const std::string name = indexed(i, "pgm");
        pgm::write_mask(dir / name, masks[i]);
        json e = i < per_mask.size() ? per_mask[i] : json::object();
        e["file"] = name;
        entries.push_back(e);
    }
    write_json_file(dir / "masks.json", {{"count", masks.size()}, {"masks", entries}});
}

std::string mask_set_hash(const std::vector<ClassMask>& masks) {
    std::vector<corpus::SliceRecord> recs;
    recs.reserve(masks.size());
    for (const auto& m : masks) recs.push_back({Grid{}, m, ""});
    return train::hex_hash(corpus::corpus_hash(recs));
}

void write_loss_csv(const fs::path& path, const std::vector<double>& curve) {
    std::ostringstream os;
    os.precision(17);
    os << "epoch,loss\n";
    for (std::size_t i = 0; i < curve.size(); ++i) os << i + 1 << ',' << curve[i] << '\n';
    write_text_file(path, os.str());
}

void write_previews(const fs::path& dir, const std::vector<corpus::SliceRecord>& records, std::size_t limit, const std::string& stem) {
    fs::create_directories(dir);
    for (std::size_t i = 0; i < std::min(limit, records.size()); ++i) {
        pgm::write_preview(dir / (stem + "_" + indexed(i, "pgm")), corpus::preprocess(records[i].hu, records[i].mask));
        pgm::write_preview(dir / (stem + "_mask_" + indexed(i, "pgm")), mask_as_image(records[i].mask));
    }
}

void write_mask_previews(const fs::path& dir, const std::vector<ClassMask>& masks, std::size_t limit, const std::string& stem) {
    fs::create_directories(dir);
    for (std::size_t i = 0; i < std::min(limit, masks.size()); ++i) pgm::write_preview(dir / (stem + "_" + indexed(i, "pgm")), mask_as_image(masks[i]));
}

}  // namespace difforge::cli
