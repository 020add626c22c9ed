#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "dilute/acceptance.hpp"

namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

/// Files of `a` and `b` other than the manifest that differ or exist on one side only.
std::vector<std::string> differing_files(const fs::path& a, const fs::path& b) {
    std::vector<std::string> names, diff;
    for (const auto& dir : {a, b})
        for (const auto& e : fs::directory_iterator(dir)) {
            auto n = e.path().filename().string();
            if (n != "manifest.txt" && std::find(names.begin(), names.end(), n) == names.end()) names.push_back(n);
        }
    std::sort(names.begin(), names.end());
    for (const auto& n : names)
        if (!fs::exists(a / n) || !fs::exists(b / n) || slurp(a / n) != slurp(b / n)) diff.push_back(n);
    return diff;
}

}  // namespace

int main(int argc, char** argv) {
    fs::path root = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "dilute-acceptance";
    std::uint64_t seed = argc > 2 ? std::strtoull(argv[2], nullptr, 10) : 1;
    dilute::AcceptanceContext ctx;
    ctx.seed = seed;
    fs::remove_all(root);
    bool all = true;
    auto first = dilute::report_all(ctx, root / "run_a", {"acceptance", 0, seed, {}}, [&](const dilute::CriterionRecord& r) {
        bool pass = r.pass && r.within_limit();
        all = all && pass;
        std::cout << fmt::format("criterion {:2d} {}  {:8.2f}s / {:.0f}s  {}\n", r.id, pass ? "PASS" : "FAIL", r.seconds,
                                 r.limit_seconds, r.title);
        if (r.pass && !r.within_limit()) std::cout << "             runtime limit exceeded\n";
        for (const auto& n : r.notes) std::cout << "             " << n << "\n";
        std::cout.flush();
    });
    dilute::report_all(ctx, root / "run_b", {"acceptance", 0, seed, {}});
    auto diff = differing_files(root / "run_a", root / "run_b");
    bool same = diff.empty();
    all = all && same;
    std::cout << fmt::format("criterion 12 {}  two report-all runs with seed {} are byte-identical outside the manifest\n",
                             same ? "PASS" : "FAIL", seed);
    for (const auto& n : diff) std::cout << "             differs: " << n << "\n";
    std::cout << fmt::format("{} of 12 criteria pass; outputs under {}\n", all ? "all" : "not all", root.string());
    return all ? 0 : 1;
}
