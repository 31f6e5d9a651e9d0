#include "kt/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace kt::config {

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

std::vector<std::string> split_list(const std::string& value) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos <= value.size()) {
        auto next = value.find(',', pos);
        if (next == std::string::npos) next = value.size();
        const auto item = trim(std::string_view(value).substr(pos, next - pos));
        if (!item.empty()) out.emplace_back(item);
        if (next == value.size()) break;
        pos = next + 1;
    }
    return out;
}

}  // namespace

Config Config::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return from_text(ss.str(), path);
}

Config Config::from_text(std::string_view text, const std::string& origin) {
    Config cfg;
    cfg.origin_ = origin;
    std::istringstream in{std::string(text)};
    std::string line;
    std::string section;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto t = trim(line);
        if (t.empty() || t.front() == '#' || t.front() == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']' || t.size() < 3) {
                throw UsageError(origin + ":" + std::to_string(line_no) + ": malformed section header");
            }
            section = std::string(trim(t.substr(1, t.size() - 2)));
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string_view::npos) {
            throw UsageError(origin + ":" + std::to_string(line_no) + ": expected key = value");
        }
        const auto key = std::string(trim(t.substr(0, eq)));
        const auto value = std::string(trim(t.substr(eq + 1)));
        if (section.empty() || key.empty()) {
            throw UsageError(origin + ":" + std::to_string(line_no) + ": key outside a [section] or empty key");
        }
        cfg.entries_[section + "." + key] = value;
    }
    return cfg;
}

void Config::set_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw UsageError("override must be section.key=value: " + assignment);
    const auto dotted = assignment.substr(0, eq);
    const auto dot = dotted.find('.');
    if (dot == std::string::npos || dot == 0 || dot + 1 == dotted.size()) {
        throw UsageError("override key must be section.key: " + assignment);
    }
    entries_[dotted] = assignment.substr(eq + 1);
}

void Config::set(const std::string& section, const std::string& key, const std::string& value) {
    entries_[section + "." + key] = value;
}

bool Config::has(const std::string& section, const std::string& key) const {
    return entries_.count(section + "." + key) > 0;
}

std::string Config::get_str(const std::string& section, const std::string& key,
                            const std::string& fallback) const {
    auto it = entries_.find(section + "." + key);
    return it == entries_.end() ? fallback : it->second;
}

int Config::get_int(const std::string& section, const std::string& key, int fallback) const {
    const auto s = get_str(section, key, "");
    if (s.empty()) return fallback;
    int v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) {
        throw UsageError(origin_ + ": " + section + "." + key + ": expected integer, got '" + s + "'");
    }
    return v;
}

std::int64_t Config::get_i64(const std::string& section, const std::string& key, std::int64_t fallback) const {
    const auto s = get_str(section, key, "");
    if (s.empty()) return fallback;
    std::int64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) {
        throw UsageError(origin_ + ": " + section + "." + key + ": expected integer, got '" + s + "'");
    }
    return v;
}

std::uint64_t Config::get_u64(const std::string& section, const std::string& key,
                              std::uint64_t fallback) const {
    const auto s = get_str(section, key, "");
    if (s.empty()) return fallback;
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) {
        throw UsageError(origin_ + ": " + section + "." + key + ": expected unsigned integer, got '" + s + "'");
    }
    return v;
}

double Config::get_double(const std::string& section, const std::string& key, double fallback) const {
    const auto s = get_str(section, key, "");
    if (s.empty()) return fallback;
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size()) {
        throw UsageError(origin_ + ": " + section + "." + key + ": expected number, got '" + s + "'");
    }
    return v;
}

bool Config::get_bool(const std::string& section, const std::string& key, bool fallback) const {
    const auto s = get_str(section, key, "");
    if (s.empty()) return fallback;
    if (s == "on" || s == "true" || s == "1" || s == "yes") return true;
    if (s == "off" || s == "false" || s == "0" || s == "no") return false;
    throw UsageError(origin_ + ": " + section + "." + key + ": expected on/off, got '" + s + "'");
}

std::vector<double> Config::get_doubles(const std::string& section, const std::string& key,
                                        std::vector<double> fallback) const {
    const auto s = get_str(section, key, "");
    if (s.empty()) return fallback;
    std::vector<double> out;
    for (const auto& item : split_list(s)) {
        char* end = nullptr;
        const double v = std::strtod(item.c_str(), &end);
        if (end != item.c_str() + item.size()) {
            throw UsageError(origin_ + ": " + section + "." + key + ": bad list item '" + item + "'");
        }
        out.push_back(v);
    }
    if (out.empty()) throw UsageError(origin_ + ": " + section + "." + key + ": empty list");
    return out;
}

std::vector<int> Config::get_ints(const std::string& section, const std::string& key,
                                  std::vector<int> fallback) const {
    const auto s = get_str(section, key, "");
    if (s.empty()) return fallback;
    std::vector<int> out;
    for (const auto& item : split_list(s)) {
        int v = 0;
        auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
        if (ec != std::errc() || p != item.data() + item.size()) {
            throw UsageError(origin_ + ": " + section + "." + key + ": bad list item '" + item + "'");
        }
        out.push_back(v);
    }
    if (out.empty()) throw UsageError(origin_ + ": " + section + "." + key + ": empty list");
    return out;
}

std::vector<std::string> Config::keys() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [key, value] : entries_) out.push_back(key);
    return out;
}

void Config::reject_unknown(const std::set<std::string>& known) const {
    std::vector<std::string> unknown;
    for (const auto& [key, value] : entries_) {
        if (!known.count(key)) unknown.push_back(key);
    }
    if (!unknown.empty()) {
        std::string msg = origin_ + ": unknown configuration keys:";
        for (const auto& k : unknown) msg += " " + k;
        throw UsageError(msg);
    }
}

}  // namespace kt::config
