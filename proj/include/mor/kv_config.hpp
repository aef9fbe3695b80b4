// Copyright (c) 2026, The mor-restore Authors
// SPDX-License-Identifier: Apache-2.0
//
// Line-oriented `key=value` text, `#` starts a comment. Used for degradation
// profiles, degradation records and training configs.

#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mor {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

/// Shortest text that parses back to the identical double.
inline std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

class KeyValues {
public:
    KeyValues() = default;

    static KeyValues parse(std::string_view text, const std::string &origin = "<text>") {
        KeyValues kv;
        std::istringstream in{std::string(text)};
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (auto hash = line.find('#'); hash != std::string::npos)
                line.erase(hash);
            const std::string t = trim(line);
            if (t.empty())
                continue;
            const auto eq = t.find('=');
            if (eq == std::string::npos)
                throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": expected key=value");
            std::string key = trim(std::string_view(t).substr(0, eq));
            std::string value = trim(std::string_view(t).substr(eq + 1));
            if (key.empty())
                throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": empty key");
            if (kv.values_.count(key))
                throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
            kv.order_.push_back(key);
            kv.values_[key] = std::move(value);
        }
        return kv;
    }

    static KeyValues load(const std::filesystem::path &path) {
        std::ifstream in(path);
        if (!in)
            throw std::runtime_error("cannot open config file " + path.string());
        std::stringstream ss;
        ss << in.rdbuf();
        return parse(ss.str(), path.string());
    }

    bool has(const std::string &key) const { return values_.count(key) != 0; }

    const std::string &get(const std::string &key) const {
        auto it = values_.find(key);
        if (it == values_.end())
            throw std::runtime_error("missing key '" + key + "'");
        return it->second;
    }

    double get_double(const std::string &key) const { return to_double(key, get(key)); }

    std::int64_t get_int(const std::string &key) const {
        const std::string &s = get(key);
        std::int64_t v = 0;
        auto res = std::from_chars(s.data(), s.data() + s.size(), v);
        if (res.ec != std::errc() || res.ptr != s.data() + s.size())
            throw std::runtime_error("key '" + key + "': expected integer, got '" + s + "'");
        return v;
    }

    std::uint64_t get_u64(const std::string &key) const {
        const std::string &s = get(key);
        std::uint64_t v = 0;
        auto res = std::from_chars(s.data(), s.data() + s.size(), v);
        if (res.ec != std::errc() || res.ptr != s.data() + s.size())
            throw std::runtime_error("key '" + key + "': expected unsigned integer, got '" + s + "'");
        return v;
    }

    /// `lo,hi` with optional surrounding brackets.
    std::pair<double, double> get_range(const std::string &key) const {
        std::string s = get(key);
        if (!s.empty() && s.front() == '[')
            s.erase(0, 1);
        if (!s.empty() && s.back() == ']')
            s.pop_back();
        const auto comma = s.find(',');
        if (comma == std::string::npos)
            throw std::runtime_error("key '" + key + "': expected range lo,hi, got '" + get(key) + "'");
        return {to_double(key, trim(s.substr(0, comma))), to_double(key, trim(s.substr(comma + 1)))};
    }

    void set(const std::string &key, std::string value) {
        if (!values_.count(key))
            order_.push_back(key);
        values_[key] = std::move(value);
    }
    void set(const std::string &key, double v) { set(key, format_double(v)); }

    /// Throws on any key outside `allowed`.
    void require_known(const std::set<std::string> &allowed, const std::string &what) const {
        for (const auto &k : order_)
            if (!allowed.count(k))
                throw std::runtime_error(what + ": unknown key '" + k + "'");
    }

    const std::vector<std::string> &keys() const noexcept { return order_; }

    std::string to_string() const {
        std::string out;
        for (const auto &k : order_)
            out += k + "=" + values_.at(k) + "\n";
        return out;
    }

private:
    static double to_double(const std::string &key, const std::string &s) {
        double v = 0.0;
        auto res = std::from_chars(s.data(), s.data() + s.size(), v);
        if (res.ec != std::errc() || res.ptr != s.data() + s.size())
            throw std::runtime_error("key '" + key + "': expected number, got '" + s + "'");
        return v;
    }

    std::map<std::string, std::string> values_;
    std::vector<std::string> order_;
};

} // namespace mor
