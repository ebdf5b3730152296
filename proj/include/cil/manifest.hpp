#pragma once

#include <filesystem>
#include <fstream>
#include <set>

#include "cil/common.hpp"

namespace cil::manifest {

inline std::uint64_t hash_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("manifest: cannot hash " + path);
    std::uint64_t h = 0xcbf29ce484222325ull;
    char buf[65536];
    while (is.read(buf, sizeof(buf)) || is.gcount() > 0)
        h = fnv1a64(buf, static_cast<std::size_t>(is.gcount()), h);
    return h;
}

/// Run manifest: command, config hash, seed, input roles and output files with
/// content hashes. Inputs are recorded by role (not path) and outputs by path
/// relative to the run directory, so identical runs in different directories
/// produce byte-identical manifests.
class Writer {
public:
    Writer(std::string command, std::uint64_t config_hash, std::uint64_t seed)
        : command_(std::move(command)), config_hash_(config_hash), seed_(seed) {}

    void add_input(const std::string& role, const std::string& path) {
        inputs_.insert("input " + role + " " + hash_hex(hash_file(path)));
    }

    void add_output(const std::string& out_dir, const std::string& rel_path) {
        const std::string full = out_dir + "/" + rel_path;
        const auto size = std::filesystem::file_size(full);
        outputs_.insert("output " + rel_path + " " + hash_hex(hash_file(full)) + " " +
                        std::to_string(size));
    }

    void write(const std::string& out_dir) const {
        std::ofstream os(out_dir + "/manifest.txt");
        if (!os) throw IoError("manifest: cannot write " + out_dir + "/manifest.txt");
        os << "cil-manifest v1\n";
        os << "command " << command_ << '\n';
        os << "config-hash " << hash_hex(config_hash_) << '\n';
        os << "seed " << seed_ << '\n';
        for (const auto& line : inputs_) os << line << '\n';
        for (const auto& line : outputs_) os << line << '\n';
        if (!os) throw IoError("manifest: write failed");
    }

private:
    std::string command_;
    std::uint64_t config_hash_ = 0;
    std::uint64_t seed_ = 0;
    std::set<std::string> inputs_;
    std::set<std::string> outputs_;
};

}  // namespace cil::manifest
