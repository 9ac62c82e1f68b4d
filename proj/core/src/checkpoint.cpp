#include "difforge/checkpoint.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "difforge/serialize.hpp"

namespace difforge {

void Checkpoint::put(std::string name, Grid g) {
    if (has(name)) throw std::invalid_argument("checkpoint: duplicate tensor '" + name + "'");
    tensors.emplace_back(std::move(name), std::move(g));
}

bool Checkpoint::has(const std::string& name) const {
    return std::any_of(tensors.begin(), tensors.end(), [&](const auto& t) { return t.first == name; });
}

const Grid& Checkpoint::tensor(const std::string& name) const {
    for (const auto& [n, g] : tensors)
        if (n == name) return g;
    throw FormatError("checkpoint has no tensor '" + name + "'");
}

void write_checkpoint(std::ostream& os, const Checkpoint& ck) {
    os.write("DFCK", 4);
    le::write_u32(os, kCheckpointVersion);
    const std::string header = ck.header.dump();
    le::write_u64(os, header.size());
    os.write(header.data(), static_cast<std::streamsize>(header.size()));
    le::write_u32(os, static_cast<std::uint32_t>(ck.tensors.size()));
    for (const auto& [name, g] : ck.tensors) {
        le::write_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_grid(os, g);
    }
    if (!os) throw FormatError("checkpoint write failed");
}

Checkpoint read_checkpoint(std::istream& is) {
    char magic[4];
    if (!is.read(magic, 4) || std::string(magic, 4) != "DFCK") throw FormatError("not a checkpoint (bad magic)");
    const std::uint32_t version = le::read_u32(is);
    if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
    const std::uint64_t len = le::read_u64(is);
    if (len > (std::uint64_t{1} << 32)) throw FormatError("checkpoint header too large");
    std::string header(len, '\0');
    if (!is.read(header.data(), static_cast<std::streamsize>(len))) throw FormatError("truncated checkpoint header");
    Checkpoint ck;
    try {
        ck.header = nlohmann::json::parse(header);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed checkpoint header: ") + e.what());
    }
    const std::uint32_t count = le::read_u32(is);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t n = le::read_u32(is);
        if (n > 4096) throw FormatError("checkpoint tensor name too long");
        std::string name(n, '\0');
        if (!is.read(name.data(), n)) throw FormatError("truncated checkpoint tensor name");
        ck.put(std::move(name), read_grid(is));
    }
    return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw FormatError("cannot open " + tmp.string());
        write_checkpoint(os, ck);
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open " + path.string());
    return read_checkpoint(is);
}

}  // namespace difforge
