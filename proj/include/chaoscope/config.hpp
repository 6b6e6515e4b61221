// config.hpp — flat key-value configuration files.
//
// Format: one `key = value` per line, `#` starts a comment, blank lines are
// ignored. Values are free text; typed getters parse on demand. Consumers
// declare the keys they accept and anything else is an error, which catches
// typos in config files early.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "chaoscope/errors.hpp"
#include "chaoscope/linalg.hpp"

namespace chaoscope {

class KeyValueConfig {
  public:
    KeyValueConfig() = default;

    static KeyValueConfig parse(const std::string& text, const std::string& origin = "<string>");
    static KeyValueConfig parse_file(const std::string& path);

    bool has(const std::string& key) const { return entries_.count(key) != 0; }

    std::string get_str(const std::string& key) const;
    std::string get_str(const std::string& key, const std::string& fallback) const;
    double get_num(const std::string& key) const;
    double get_num(const std::string& key, double fallback) const;
    long long get_int(const std::string& key) const;
    long long get_int(const std::string& key, long long fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
    Vec get_list(const std::string& key) const;
    Vec get_list(const std::string& key, const Vec& fallback) const;

    void set(const std::string& key, const std::string& value);
    void set_num(const std::string& key, double value);
    void set_int(const std::string& key, long long value);
    void set_list(const std::string& key, const Vec& values);

    // Throws ConfigError naming the first key not in `allowed`.
    void require_known(const std::vector<std::string>& allowed) const;

    // Deterministic round-trip form: sorted `key = value` lines.
    std::string serialize() const;

    const std::map<std::string, std::string>& entries() const { return entries_; }

  private:
    std::map<std::string, std::string> entries_;
    std::string origin_ = "<none>";
};

// Full-precision, locale-independent float formatting (shortest round-trip).
std::string format_double(double v);

}  // namespace chaoscope
