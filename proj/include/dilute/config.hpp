#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/algorithm/string.hpp>
#include <boost/lexical_cast.hpp>
#include <fmt/format.h>

#include "dilute/errors.hpp"
#include "dilute/twobody.hpp"

namespace dilute {

struct KeySpec {
    std::string key;
    std::optional<std::string> fallback;  // nullopt: the key is required
    std::string help;
};

/// Every recognized key. Flags override keys one-to-one.
inline const std::vector<KeySpec>& config_schema() {
    static const std::vector<KeySpec> keys{
        {"run.seed", "1", "global seed for all random streams"},
        {"run.out", "out", "output directory"},
        {"potential.shape", std::nullopt, "square-barrier | gaussian | smooth-bump"},
        {"potential.v0", std::nullopt, "amplitude V0"},
        {"potential.range", std::nullopt, "barrier radius, gaussian width or bump radius"},
        {"potential.tol", "1e-12", "truncation tolerance for gaussian and bump supports"},
        {"twobody.inner_steps", "2000", "zero-energy grid steps inside the support"},
        {"neumann.kappa", "4,8,16,32", "ball radii for the Neumann problem"},
        {"neumann.points_per_kappa", "10000", "radial points per Neumann solve"},
        {"scales.rho", "1e-4,1e-6,1e-8", "density grid for scales and doubling-verify"},
        {"scales.eta", "0.05", "exponent eta in (0, 1/15)"},
        {"scales.R0", "1", "potential range used for the hierarchy check"},
        {"scales.pref.lm1", "1", "prefactor of l_-1"},
        {"scales.pref.l0", "1", "prefactor of l_0"},
        {"scales.pref.l1", "1", "prefactor of l_1"},
        {"scales.pref.l2", "1", "prefactor of l_2"},
        {"mc.samples", "100000", "Monte Carlo samples per integral"},
        {"mc.strata", "8", "strata per axis"},
        {"mc.outer_samples", "20000", "samples of the outer average in the cell certificate"},
        {"cell.rho", "1e-5", "density of the desk cell"},
        {"cell.lm1", "4", "desk l_-1"},
        {"cell.l0", "16", "desk l_0"},
        {"cell.l1", "200", "desk cell side"},
        {"cell.h", "2", "l2 = 2^h l1"},
        {"cell.n", "5", "particles placed in the cell"},
        {"cell.environment", "40", "particles drawn on the torus outside the cell"},
        {"cell.c_lssy", "1", "constant of the dense-regime a-priori bound"},
        {"cell.potential.shape", "square-barrier", "potential used by the cell certificate"},
        {"cell.potential.v0", "0.002", "amplitude of the cell potential"},
        {"cell.potential.range", "1", "range of the cell potential"},
        {"doubling.h", "2", "number of doubling steps"},
        {"doubling.chernoff_n", "2000", "largest n in the Chernoff tail check"},
        {"oracle.mode", "relative", "relative | particles | radial | substitution"},
        {"oracle.particles", "2", "particle count for mode=particles"},
        {"oracle.points", "64", "grid points per axis"},
        {"oracle.side", "0", "box side; 0 means length_over_a * a"},
        {"oracle.length_over_a", "20", "box side in scattering lengths when side = 0"},
        {"oracle.boundary", "periodic", "neumann | periodic | dirichlet (mode=particles)"},
        {"oracle.nev", "2", "eigenpairs to compute"},
        {"oracle.tol", "1e-9", "absolute residual target"},
        {"oracle.kappa", "16", "ball radius for mode=radial and mode=substitution"},
    };
    return keys;
}

inline const KeySpec* find_key(const std::string& key) {
    for (const auto& k : config_schema())
        if (k.key == key) return &k;
    return nullptr;
}

/// Flat dotted-key configuration: `key = value` lines, `#` comments.
class Config {
public:
    struct Entry {
        std::string value;
        std::string origin;  // "file:line", "flag" or "default"
    };

    static Config parse(std::istream& in, const std::string& source = "<config>") {
        Config c;
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            boost::algorithm::trim(line);
            if (line.empty()) continue;
            auto where = fmt::format("{}:{}", source, lineno);
            auto eq = line.find('=');
            if (eq == std::string::npos) throw ConfigError(fmt::format("{}: expected 'key = value'", where));
            std::string key = boost::algorithm::trim_copy(line.substr(0, eq));
            std::string value = boost::algorithm::trim_copy(line.substr(eq + 1));
            if (key.empty()) throw ConfigError(fmt::format("{}: empty key", where));
            if (!find_key(key)) throw ConfigError(fmt::format("{}: unknown key '{}'", where, key));
            if (value.empty()) throw ConfigError(fmt::format("{}: key '{}' has no value", where, key));
            if (c.entries_.count(key)) throw ConfigError(fmt::format("{}: key '{}' given twice", where, key));
            c.entries_[key] = {value, where};
        }
        return c;
    }

    static Config from_file(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw ConfigError(fmt::format("cannot open config file '{}'", path));
        return parse(f, path);
    }

    void set(const std::string& key, const std::string& value, const std::string& origin = "flag") {
        if (!find_key(key)) throw ConfigError(fmt::format("unknown key '{}'", key));
        entries_[key] = {value, origin};
    }

    bool has(const std::string& key) const { return entries_.count(key) > 0; }

    std::string str(const std::string& key) const {
        auto it = entries_.find(key);
        if (it != entries_.end()) return it->second.value;
        const auto* spec = find_key(key);
        if (!spec) throw ConfigError(fmt::format("unknown key '{}'", key));
        if (!spec->fallback) throw ConfigError(fmt::format("missing config key '{}' ({})", key, spec->help));
        return *spec->fallback;
    }

    double num(const std::string& key) const { return convert<double>(key, str(key)); }
    std::int64_t integer(const std::string& key) const { return convert<std::int64_t>(key, str(key)); }
    std::uint64_t unsigned_integer(const std::string& key) const { return convert<std::uint64_t>(key, str(key)); }

    std::vector<double> list(const std::string& key) const {
        std::vector<std::string> parts;
        auto s = str(key);
        boost::algorithm::split(parts, s, boost::algorithm::is_any_of(","));
        std::vector<double> out;
        for (auto& p : parts) out.push_back(convert<double>(key, boost::algorithm::trim_copy(p)));
        return out;
    }

    PotentialSpec potential(const std::string& prefix = "potential") const {
        auto shape = parse_shape(str(prefix + ".shape"));
        double v0 = num(prefix + ".v0"), range = num(prefix + ".range");
        switch (shape) {
            case PotentialShape::square_barrier: return PotentialSpec::square_barrier(v0, range);
            case PotentialShape::gaussian: return PotentialSpec::gaussian(v0, range, num("potential.tol"));
            case PotentialShape::smooth_bump: return PotentialSpec::smooth_bump(v0, range, num("potential.tol"));
        }
        throw ConfigError("unhandled potential shape");
    }

    /// Explicitly given keys, sorted, one `key = value` per line.
    std::string canonical() const {
        std::string out;
        for (const auto& [k, e] : entries_) out += k + " = " + e.value + "\n";
        return out;
    }

    /// FNV-1a of the canonical text.
    std::uint64_t hash() const {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (unsigned char ch : canonical()) {
            h ^= ch;
            h *= 0x100000001b3ULL;
        }
        return h;
    }

    const std::map<std::string, Entry>& entries() const { return entries_; }

private:
    template <class T>
    static T convert(const std::string& key, const std::string& v) {
        try {
            return boost::lexical_cast<T>(v);
        } catch (const boost::bad_lexical_cast&) {
            throw ConfigError(fmt::format("key '{}': cannot parse '{}'", key, v));
        }
    }

    std::map<std::string, Entry> entries_;
};

}  // namespace dilute
