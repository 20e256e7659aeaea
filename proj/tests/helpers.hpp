#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "xbdkit/error.hpp"

namespace testutil {

namespace fs = std::filesystem;

// Self-cleaning scratch directory under the system temp root.
struct TempDir {
    fs::path path;

    TempDir() {
        static std::mt19937_64 rng{std::random_device{}()};
        for (int tries = 0; tries < 64; ++tries) {
            fs::path candidate =
                fs::temp_directory_path() / ("xbdkit-test-" + std::to_string(rng()));
            std::error_code ec;
            if (fs::create_directory(candidate, ec)) {
                path = candidate;
                return;
            }
        }
        throw xbdkit::IoError("could not create a scratch directory");
    }

    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }

    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    fs::path operator/(const std::string& name) const { return path / name; }
};

inline void write_text(const fs::path& p, const std::string& content) {
    fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    out << content;
}

inline std::string read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw xbdkit::IoError("cannot open " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace testutil
