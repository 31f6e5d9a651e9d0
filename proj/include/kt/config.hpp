#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "kt/errors.hpp"

namespace kt::config {

// Sectioned key = value configuration. Consumers read typed values with
// defaults; keys outside the declared schema are rejected up front so typos
// fail loudly instead of being ignored.
class Config {
public:
    Config() = default;
    static Config from_file(const std::string& path);
    static Config from_text(std::string_view text, const std::string& origin);

    // Override entry as "section.key=value".
    void set_override(const std::string& assignment);
    void set(const std::string& section, const std::string& key, const std::string& value);

    bool has(const std::string& section, const std::string& key) const;

    std::string get_str(const std::string& section, const std::string& key, const std::string& fallback) const;
    int get_int(const std::string& section, const std::string& key, int fallback) const;
    std::int64_t get_i64(const std::string& section, const std::string& key, std::int64_t fallback) const;
    std::uint64_t get_u64(const std::string& section, const std::string& key, std::uint64_t fallback) const;
    double get_double(const std::string& section, const std::string& key, double fallback) const;
    bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
    std::vector<double> get_doubles(const std::string& section, const std::string& key,
                                    std::vector<double> fallback) const;
    std::vector<int> get_ints(const std::string& section, const std::string& key,
                              std::vector<int> fallback) const;

    // All "section.key" entries, for schema validation.
    std::vector<std::string> keys() const;

    // Throws UsageError listing every entry not present in `known`.
    void reject_unknown(const std::set<std::string>& known) const;

    const std::string& origin() const { return origin_; }

private:
    std::string origin_ = "<none>";
    std::map<std::string, std::string> entries_;  // "section.key" -> value
};

}  // namespace kt::config
