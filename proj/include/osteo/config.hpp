#pragma once

#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "osteo/error.hpp"

namespace osteo {

// Ordered key=value text, one entry per line, '#' starts a comment. The same
// format backs model configs, effective-config echoes and CLI config files.
class Config {
  public:
    void set(const std::string& key, const std::string& value) {
        for (auto& [k, v] : entries_)
            if (k == key) {
                v = value;
                return;
            }
        entries_.emplace_back(key, value);
    }

    void set(const std::string& key, double value) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.17g", value);
        set(key, std::string(buf));
    }

    void set(const std::string& key, long long value) { set(key, std::to_string(value)); }

    bool has(const std::string& key) const { return get(key).has_value(); }

    std::optional<std::string> get(const std::string& key) const {
        for (const auto& [k, v] : entries_)
            if (k == key) return v;
        return std::nullopt;
    }

    std::string require(const std::string& key) const {
        if (auto v = get(key)) return *v;
        throw ParseError("config: missing key '" + key + "'");
    }

    double require_double(const std::string& key) const {
        const std::string v = require(key);
        try {
            std::size_t used = 0;
            const double d = std::stod(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return d;
        } catch (const std::exception&) {
            throw ParseError("config: key '" + key + "' has non-numeric value '" + v + "'");
        }
    }

    long long require_int(const std::string& key) const {
        const std::string v = require(key);
        try {
            std::size_t used = 0;
            const long long i = std::stoll(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return i;
        } catch (const std::exception&) {
            throw ParseError("config: key '" + key + "' has non-integer value '" + v + "'");
        }
    }

    const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

    static Config parse(std::istream& is, const std::string& origin) {
        Config cfg;
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(is, line)) {
            ++line_no;
            const std::string stripped = strip(line.substr(0, line.find('#')));
            if (stripped.empty()) continue;
            const auto eq = stripped.find('=');
            if (eq == std::string::npos)
                throw ParseError(origin + ":" + std::to_string(line_no) +
                                 ": expected key=value, got '" + stripped + "'");
            const std::string key = strip(stripped.substr(0, eq));
            if (key.empty())
                throw ParseError(origin + ":" + std::to_string(line_no) + ": empty key");
            cfg.set(key, strip(stripped.substr(eq + 1)));
        }
        return cfg;
    }

    static Config parse_file(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw IoError("config: cannot open " + path);
        return parse(is, path);
    }

    std::string str() const {
        std::ostringstream os;
        for (const auto& [k, v] : entries_) os << k << " = " << v << "\n";
        return os.str();
    }

    void write_file(const std::string& path) const {
        std::ofstream os(path);
        if (!os) throw IoError("config: cannot open " + path + " for writing");
        os << str();
        if (!os) throw IoError("config: write to " + path + " failed");
    }

  private:
    static std::string strip(std::string s) {
        const auto notspace = [](unsigned char ch) { return !std::isspace(ch); };
        while (!s.empty() && !notspace(static_cast<unsigned char>(s.front()))) s.erase(s.begin());
        while (!s.empty() && !notspace(static_cast<unsigned char>(s.back()))) s.pop_back();
        return s;
    }

    std::vector<std::pair<std::string, std::string>> entries_;
};

} // namespace osteo
