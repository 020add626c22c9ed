#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <boost/version.hpp>
#include <fmt/chrono.h>
#include <fmt/format.h>
#include <gmp.h>

#include "dilute/errors.hpp"

namespace dilute {

inline constexpr const char* tool_version = "0.1.0";

inline std::string library_versions() {
    return fmt::format("compiler={} eigen={}.{}.{} boost={} fmt={} gmp={}", __VERSION__, EIGEN_WORLD_VERSION,
                       EIGEN_MAJOR_VERSION, EIGEN_MINOR_VERSION, BOOST_LIB_VERSION, FMT_VERSION, gmp_version);
}

/// Plain-text run record. The only place that holds wall-clock data.
struct Manifest {
    std::string command;
    std::uint64_t config_hash = 0;
    std::uint64_t seed = 0;
    std::vector<std::pair<std::string, std::string>> extra;  // key, value
};

inline void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw ConfigError(fmt::format("cannot write '{}'", p.string()));
    f << text;
}

inline std::filesystem::path ensure_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir))
        throw ConfigError(fmt::format("cannot create output directory '{}'", dir.string()));
    return dir;
}

/// Writes manifest.txt listing every other regular file in `dir`.
inline void write_manifest(const std::filesystem::path& dir, const Manifest& m) {
    std::vector<std::string> files;
    for (const auto& e : std::filesystem::directory_iterator(dir))
        if (e.is_regular_file() && e.path().filename() != "manifest.txt") files.push_back(e.path().filename().string());
    std::sort(files.begin(), files.end());
    std::string out;
    out += fmt::format("tool = dilute {}\n", tool_version);
    out += fmt::format("command = {}\n", m.command);
    out += fmt::format("config_hash = {:016x}\n", m.config_hash);
    out += fmt::format("seed = {}\n", m.seed);
    out += fmt::format("versions = {}\n", library_versions());
    out += fmt::format("timestamp = {:%Y-%m-%dT%H:%M:%SZ}\n",
                       std::chrono::floor<std::chrono::seconds>(std::chrono::system_clock::now()));
    for (const auto& [k, v] : m.extra) out += fmt::format("{} = {}\n", k, v);
    for (const auto& f : files) out += fmt::format("file = {}\n", f);
    write_text(dir / "manifest.txt", out);
}

}  // namespace dilute
