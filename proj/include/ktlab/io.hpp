#pragma once

// Persistence and configuration plumbing shared by the tools: deterministic
// CSV emission (shortest round-trip doubles, so identical runs produce
// byte-identical files), JSON meta sidecars, a small sectioned key=value
// config format, and the FNV hash that ties every output to its resolved
// config.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "ktlab/hard_disk.hpp"

namespace ktlab {

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = kFnvOffset;
    for (const unsigned char ch : s) {
        h ^= ch;
        h *= kFnvPrime;
    }
    return h;
}

inline std::string hex64(std::uint64_t h) {
    char buf[17];
    for (int i = 15; i >= 0; --i) {
        buf[i] = "0123456789abcdef"[h & 0xf];
        h >>= 4;
    }
    return std::string(buf, 16);
}

// Shortest decimal form that round-trips the exact double.
inline std::string format_double(double x) {
    char buf[40];
    const auto res = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s, const std::string& what) {
    double x = 0.0;
    const char* b = s.data();
    const char* e = s.data() + s.size();
    const auto res = std::from_chars(b, e, x);
    if (res.ec != std::errc{} || res.ptr != e)
        throw std::runtime_error(what + ": not a number: '" + std::string(s) + "'");
    return x;
}

inline long long parse_int(std::string_view s, const std::string& what) {
    long long x = 0;
    const char* b = s.data();
    const char* e = s.data() + s.size();
    const auto res = std::from_chars(b, e, x);
    if (res.ec != std::errc{} || res.ptr != e)
        throw std::runtime_error(what + ": not an integer: '" + std::string(s) + "'");
    return x;
}

namespace detail {

inline std::string_view trim(std::string_view s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
    while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
    return s.substr(b, e - b);
}

}  // namespace detail

// --------------------------------------------------------------------------
// CSV

class CsvWriter {
public:
    explicit CsvWriter(std::vector<std::string> columns) : columns_(std::move(columns)) {
        if (columns_.empty()) throw std::invalid_argument("csv: no columns");
    }

    // Comment lines ("# ...") go above the header; meta like the config hash
    // lives here so the payload stays a plain rectangular table.
    void add_comment(const std::string& line) {
        if (rows_ != 0) throw std::logic_error("csv: comments must precede rows");
        comments_.push_back(line);
    }

    void add_row(const std::vector<double>& row) {
        if (row.size() != columns_.size())
            throw std::invalid_argument("csv: row width " + std::to_string(row.size()) +
                                        " != " + std::to_string(columns_.size()));
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) body_ += ',';
            body_ += format_double(row[i]);
        }
        body_ += '\n';
        ++rows_;
    }

    std::size_t rows() const { return rows_; }

    std::string str() const {
        std::string out;
        for (const auto& c : comments_) {
            out += "# ";
            out += c;
            out += '\n';
        }
        for (std::size_t i = 0; i < columns_.size(); ++i) {
            if (i) out += ',';
            out += columns_[i];
        }
        out += '\n';
        out += body_;
        return out;
    }

    void write(const std::string& path) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("csv: cannot open " + path);
        f << str();
        if (!f) throw std::runtime_error("csv: write failed: " + path);
    }

private:
    std::vector<std::string> comments_;
    std::vector<std::string> columns_;
    std::string body_;
    std::size_t rows_ = 0;
};

struct CsvTable {
    std::vector<std::string> comments;  // without the leading "# "
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;

    std::size_t column(const std::string& name) const {
        for (std::size_t i = 0; i < columns.size(); ++i)
            if (columns[i] == name) return i;
        throw std::runtime_error("csv: no column '" + name + "'");
    }
};

inline CsvTable parse_csv(std::string_view text) {
    CsvTable t;
    std::size_t pos = 0;
    bool have_header = false;
    int lineno = 0;
    while (pos < text.size()) {
        std::size_t nl = text.find('\n', pos);
        if (nl == std::string_view::npos) nl = text.size();
        const std::string_view line = detail::trim(text.substr(pos, nl - pos));
        pos = nl + 1;
        ++lineno;
        if (line.empty()) continue;
        if (line[0] == '#') {
            t.comments.emplace_back(detail::trim(line.substr(1)));
            continue;
        }
        std::vector<std::string_view> cells;
        std::size_t start = 0;
        while (true) {
            const std::size_t comma = line.find(',', start);
            if (comma == std::string_view::npos) {
                cells.push_back(detail::trim(line.substr(start)));
                break;
            }
            cells.push_back(detail::trim(line.substr(start, comma - start)));
            start = comma + 1;
        }
        if (!have_header) {
            for (const auto c : cells) t.columns.emplace_back(c);
            have_header = true;
            continue;
        }
        if (cells.size() != t.columns.size())
            throw std::runtime_error("csv: line " + std::to_string(lineno) + " has " +
                                     std::to_string(cells.size()) + " cells, expected " +
                                     std::to_string(t.columns.size()));
        std::vector<double> row(cells.size());
        for (std::size_t i = 0; i < cells.size(); ++i)
            row[i] = parse_double(cells[i], "csv line " + std::to_string(lineno));
        t.rows.push_back(std::move(row));
    }
    if (!have_header) throw std::runtime_error("csv: no header row");
    return t;
}

inline CsvTable read_csv(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("csv: cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_csv(ss.str());
}

// --------------------------------------------------------------------------
// Config: sectioned key=value text.
//
//   # comment
//   seed = 42
//   [run]
//   horizon = 1.5
//
// becomes {"seed": "42", "run.horizon": "1.5"}. Full-line comments only
// (# or ;); duplicate keys are an error rather than last-wins, since a
// silently shadowed parameter is the worst kind of experiment bug.

class Config {
public:
    Config() = default;

    static Config parse(std::string_view text) {
        Config cfg;
        std::string section;
        std::size_t pos = 0;
        int lineno = 0;
        while (pos <= text.size()) {
            std::size_t nl = text.find('\n', pos);
            if (nl == std::string_view::npos) nl = text.size();
            const std::string_view line = detail::trim(text.substr(pos, nl - pos));
            pos = nl + 1;
            ++lineno;
            if (line.empty() || line[0] == '#' || line[0] == ';') continue;
            if (line.front() == '[') {
                if (line.back() != ']')
                    throw std::runtime_error("config line " + std::to_string(lineno) +
                                             ": malformed section header");
                section = std::string(detail::trim(line.substr(1, line.size() - 2)));
                continue;
            }
            const std::size_t eq = line.find('=');
            if (eq == std::string_view::npos)
                throw std::runtime_error("config line " + std::to_string(lineno) +
                                         ": expected key = value");
            std::string key(detail::trim(line.substr(0, eq)));
            const std::string val(detail::trim(line.substr(eq + 1)));
            if (key.empty())
                throw std::runtime_error("config line " + std::to_string(lineno) + ": empty key");
            if (!section.empty()) key = section + "." + key;
            if (cfg.kv_.count(key))
                throw std::runtime_error("config line " + std::to_string(lineno) +
                                         ": duplicate key '" + key + "'");
            cfg.kv_.emplace(std::move(key), val);
        }
        return cfg;
    }

    static Config load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("config: cannot open " + path);
        std::ostringstream ss;
        ss << f.rdbuf();
        return parse(ss.str());
    }

    bool has(const std::string& key) const { return kv_.count(key) != 0; }

    void set(const std::string& key, const std::string& value) { kv_[key] = value; }

    const std::string& get_string(const std::string& key) const {
        const auto it = kv_.find(key);
        if (it == kv_.end()) throw std::runtime_error("config: missing key '" + key + "'");
        return it->second;
    }

    std::string get_string(const std::string& key, const std::string& dflt) const {
        const auto it = kv_.find(key);
        return it == kv_.end() ? dflt : it->second;
    }

    double get_double(const std::string& key) const {
        return parse_double(get_string(key), "config key '" + key + "'");
    }
    double get_double(const std::string& key, double dflt) const {
        return has(key) ? get_double(key) : dflt;
    }

    long long get_int(const std::string& key) const {
        return parse_int(get_string(key), "config key '" + key + "'");
    }
    long long get_int(const std::string& key, long long dflt) const {
        return has(key) ? get_int(key) : dflt;
    }

    // Sorted key=value dump; what gets hashed, so key order and comments in
    // the source text cannot change an output's identity, but any value
    // change does.
    std::string canonical() const {
        std::string out;
        for (const auto& [k, v] : kv_) {
            out += k;
            out += '=';
            out += v;
            out += '\n';
        }
        return out;
    }

    std::uint64_t hash() const { return fnv1a64(canonical()); }

    const std::map<std::string, std::string>& entries() const { return kv_; }

private:
    std::map<std::string, std::string> kv_;
};

// --------------------------------------------------------------------------
// JSON meta sidecar

inline void write_json(const std::string& path, const nlohmann::json& j) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("json: cannot open " + path);
    f << j.dump(2) << '\n';
    if (!f) throw std::runtime_error("json: write failed: " + path);
}

inline nlohmann::json read_json(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("json: cannot open " + path);
    return nlohmann::json::parse(f);
}

// --------------------------------------------------------------------------
// Particle snapshots. Self-contained: the scalar state rides along as
// key=value comment lines, so a snapshot can be re-loaded without its meta
// sidecar.

inline void write_snapshot(const std::string& path, const ParticleConfig& c,
                           std::uint64_t config_hash) {
    CsvWriter w({"x1", "x2", "v1", "v2"});
    w.add_comment("config_hash=" + hex64(config_hash));
    w.add_comment("eps=" + format_double(c.eps));
    w.add_comment("beta=" + format_double(c.beta_tag));
    w.add_comment("time=" + format_double(c.time));
    for (int i = 0; i < c.n(); ++i) {
        const Vec2 x = c.positions[i];
        const Vec2 v = c.velocities[i];
        w.add_row({x.x, x.y, v.x, v.y});
    }
    w.write(path);
}

inline ParticleConfig read_snapshot(const std::string& path) {
    const CsvTable t = read_csv(path);
    ParticleConfig c;
    for (const auto& com : t.comments) {
        const std::size_t eq = com.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = com.substr(0, eq);
        const std::string val = com.substr(eq + 1);
        if (key == "eps") c.eps = parse_double(val, "snapshot eps");
        if (key == "beta") c.beta_tag = parse_double(val, "snapshot beta");
        if (key == "time") c.time = parse_double(val, "snapshot time");
    }
    const std::size_t ix1 = t.column("x1");
    const std::size_t ix2 = t.column("x2");
    const std::size_t iv1 = t.column("v1");
    const std::size_t iv2 = t.column("v2");
    for (const auto& r : t.rows) {
        c.positions.push_back({r[ix1], r[ix2]});
        c.velocities.push_back({r[iv1], r[iv2]});
    }
    return c;
}

}  // namespace ktlab
