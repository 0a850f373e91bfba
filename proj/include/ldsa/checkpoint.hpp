#pragma once

// On-disk snapshots: a text manifest (format version, config hash, block
// names and shapes) next to raw little-endian 64-bit float arrays, one file
// per block. Covers the online parameters, the target parameters and the
// optimizer state, so a reloaded run continues bit-for-bit.

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ldsa/errors.hpp"
#include "ldsa/learner.hpp"
#include "ldsa/params.hpp"

namespace ldsa {

inline constexpr int kCheckpointFormat = 1;

struct CheckpointMeta {
    int format = kCheckpointFormat;
    std::uint64_t config_hash = 0;
    long timesteps = 0;
    long episodes = 0;
};

namespace detail {

inline std::string block_file_name(const std::string& name) {
    std::string out;
    for (char c : name) out += c == '/' ? '.' : c;
    return out + ".f64";
}

inline void write_f64_le(const std::filesystem::path& path, std::span<const double> values) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot write " + path.string());
    std::vector<unsigned char> bytes(values.size() * 8);
    for (std::size_t i = 0; i < values.size(); ++i) {
        std::uint64_t u = std::bit_cast<std::uint64_t>(values[i]);
        for (int b = 0; b < 8; ++b) bytes[i * 8 + b] = static_cast<unsigned char>((u >> (8 * b)) & 0xff);
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("short write to " + path.string());
}

inline std::vector<double> read_f64_le(const std::filesystem::path& path, std::size_t count) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot read " + path.string());
    std::vector<unsigned char> bytes(count * 8);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (static_cast<std::size_t>(in.gcount()) != bytes.size()) {
        throw CheckpointError(path.string() + " holds fewer than the expected " + std::to_string(count) + " values");
    }
    std::vector<double> values(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::uint64_t u = 0;
        for (int b = 0; b < 8; ++b) u |= static_cast<std::uint64_t>(bytes[i * 8 + b]) << (8 * b);
        values[i] = std::bit_cast<double>(u);
    }
    return values;
}

struct ManifestEntry {
    std::string name;
    Shape shape;
};

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& dir, Learner& learner, const CheckpointMeta& meta) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "blocks");

    std::vector<std::pair<std::string, std::span<const double>>> blocks;
    auto add_store = [&](const std::string& prefix, const ParamStore& store) {
        for (int i = 0; i < store.block_count(); ++i) {
            const ParamBlock& b = store.block(i);
            blocks.emplace_back(prefix + b.name, std::span<const double>(b.value));
        }
    };
    add_store("", learner.params());
    add_store("target/", learner.target_params());
    const auto& opt_state = learner.optimizer().state();
    for (int i = 0; i < learner.params().block_count(); ++i) {
        blocks.emplace_back("opt/v/" + learner.params().block(i).name,
                            std::span<const double>(opt_state[static_cast<std::size_t>(i)]));
    }

    std::ostringstream manifest;
    manifest << "format " << meta.format << "\n";
    char hex[32];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(meta.config_hash));
    manifest << "config_hash " << hex << "\n";
    manifest << "timesteps " << meta.timesteps << "\n";
    manifest << "episodes " << meta.episodes << "\n";
    auto shape_for = [&](const std::string& full) -> Shape {
        std::string bare = full;
        if (bare.rfind("target/", 0) == 0) bare = bare.substr(7);
        else if (bare.rfind("opt/v/", 0) == 0) bare = bare.substr(6);
        return learner.params().at(bare).shape;
    };
    for (const auto& [name, values] : blocks) {
        manifest << "block " << name << " " << detail::block_file_name(name);
        Shape sh = shape_for(name);
        manifest << " " << sh.size();
        for (int d : sh) manifest << " " << d;
        manifest << "\n";
        detail::write_f64_le(dir / "blocks" / detail::block_file_name(name), values);
    }
    std::ofstream out(dir / "manifest.txt");
    if (!out) throw CheckpointError("cannot write " + (dir / "manifest.txt").string());
    out << manifest.str();
    if (!out) throw CheckpointError("short write to " + (dir / "manifest.txt").string());
}

inline CheckpointMeta load_checkpoint(const std::filesystem::path& dir, Learner& learner) {
    namespace fs = std::filesystem;
    std::ifstream in(dir / "manifest.txt");
    if (!in) throw CheckpointError("cannot open " + (dir / "manifest.txt").string());

    CheckpointMeta meta;
    std::vector<std::pair<detail::ManifestEntry, std::string>> entries;  // entry, file
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream is(line);
        std::string kind;
        is >> kind;
        auto bad = [&](const std::string& why) {
            throw CheckpointError("manifest line " + std::to_string(line_no) + ": " + why);
        };
        if (kind == "format") {
            if (!(is >> meta.format)) bad("unreadable format version");
            if (meta.format != kCheckpointFormat) {
                throw CheckpointError("checkpoint format " + std::to_string(meta.format) +
                                      " is not the supported format " + std::to_string(kCheckpointFormat));
            }
        } else if (kind == "config_hash") {
            std::string hex;
            if (!(is >> hex)) bad("unreadable config hash");
            meta.config_hash = std::stoull(hex, nullptr, 16);
        } else if (kind == "timesteps") {
            if (!(is >> meta.timesteps)) bad("unreadable timestep count");
        } else if (kind == "episodes") {
            if (!(is >> meta.episodes)) bad("unreadable episode count");
        } else if (kind == "block") {
            detail::ManifestEntry e;
            std::string file;
            std::size_t ndims = 0;
            if (!(is >> e.name >> file >> ndims)) bad("unreadable block header");
            e.shape.resize(ndims);
            for (auto& d : e.shape) {
                if (!(is >> d)) bad("unreadable block shape");
            }
            entries.emplace_back(std::move(e), std::move(file));
        } else {
            bad("unknown record '" + kind + "'");
        }
    }

    auto load_into = [&](const detail::ManifestEntry& e, const std::string& file, const Shape& expect,
                         std::span<double> dst) {
        if (e.shape != expect) {
            throw CheckpointError("block " + e.name + " holds shape " + shape_str(e.shape) +
                                  " but the model expects " + shape_str(expect));
        }
        auto values = detail::read_f64_le(dir / "blocks" / file, dst.size());
        std::copy(values.begin(), values.end(), dst.begin());
    };

    std::size_t seen = 0;
    for (const auto& [e, file] : entries) {
        if (e.name.rfind("target/", 0) == 0) {
            const std::string bare = e.name.substr(7);
            if (!learner.target_params().has(bare)) throw CheckpointError("unexpected target block " + bare);
            ParamBlock& b = learner.target_params().at(bare);
            load_into(e, file, b.shape, b.value);
            ++seen;
        } else if (e.name.rfind("opt/v/", 0) == 0) {
            const std::string bare = e.name.substr(6);
            if (!learner.params().has(bare)) throw CheckpointError("unexpected optimizer block " + bare);
            int idx = -1;
            for (int i = 0; i < learner.params().block_count(); ++i) {
                if (learner.params().block(i).name == bare) {
                    idx = i;
                    break;
                }
            }
            load_into(e, file, learner.params().block(idx).shape,
                      learner.optimizer().state()[static_cast<std::size_t>(idx)]);
            ++seen;
        } else {
            if (!learner.params().has(e.name)) throw CheckpointError("unexpected parameter block " + e.name);
            ParamBlock& b = learner.params().at(e.name);
            load_into(e, file, b.shape, b.value);
            ++seen;
        }
    }
    const std::size_t expected = static_cast<std::size_t>(learner.params().block_count()) * 3;
    if (seen != expected) {
        throw CheckpointError("checkpoint lists " + std::to_string(seen) + " blocks, the model needs " +
                              std::to_string(expected));
    }
    return meta;
}

}  // namespace ldsa
