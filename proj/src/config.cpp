#include "chaoscope/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace chaoscope {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double parse_number(const std::string& text, const std::string& key) {
    // std::from_chars<double> rejects leading '+', so route through strtod.
    const char* c = text.c_str();
    char* end = nullptr;
    double v = std::strtod(c, &end);
    if (end == c || *end != '\0')
        throw ConfigError("key '" + key + "': expected a number, got '" + text + "'");
    return v;
}

}  // namespace

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

KeyValueConfig KeyValueConfig::parse(const std::string& text, const std::string& origin) {
    KeyValueConfig kv;
    kv.origin_ = origin;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
        if (kv.entries_.count(key))
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
        kv.entries_[key] = value;
    }
    return kv;
}

KeyValueConfig KeyValueConfig::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
}

std::string KeyValueConfig::get_str(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end())
        throw ConfigError(origin_ + ": missing required key '" + key + "'");
    return it->second;
}

std::string KeyValueConfig::get_str(const std::string& key, const std::string& fallback) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? fallback : it->second;
}

double KeyValueConfig::get_num(const std::string& key) const {
    return parse_number(get_str(key), key);
}

double KeyValueConfig::get_num(const std::string& key, double fallback) const {
    return has(key) ? get_num(key) : fallback;
}

long long KeyValueConfig::get_int(const std::string& key) const {
    double v = get_num(key);
    long long i = static_cast<long long>(v);
    if (static_cast<double>(i) != v)
        throw ConfigError("key '" + key + "': expected an integer, got '" + get_str(key) + "'");
    return i;
}

long long KeyValueConfig::get_int(const std::string& key, long long fallback) const {
    return has(key) ? get_int(key) : fallback;
}

std::uint64_t KeyValueConfig::get_u64(const std::string& key, std::uint64_t fallback) const {
    if (!has(key)) return fallback;
    long long v = get_int(key);
    if (v < 0) throw ConfigError("key '" + key + "': expected a non-negative integer");
    return static_cast<std::uint64_t>(v);
}

Vec KeyValueConfig::get_list(const std::string& key) const {
    std::istringstream in(get_str(key));
    Vec out;
    std::string tok;
    while (in >> tok) out.push_back(parse_number(tok, key));
    return out;
}

Vec KeyValueConfig::get_list(const std::string& key, const Vec& fallback) const {
    return has(key) ? get_list(key) : fallback;
}

void KeyValueConfig::set(const std::string& key, const std::string& value) {
    entries_[key] = value;
}

void KeyValueConfig::set_num(const std::string& key, double value) {
    entries_[key] = format_double(value);
}

void KeyValueConfig::set_int(const std::string& key, long long value) {
    entries_[key] = std::to_string(value);
}

void KeyValueConfig::set_list(const std::string& key, const Vec& values) {
    std::string s;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) s += ' ';
        s += format_double(values[i]);
    }
    entries_[key] = s;
}

void KeyValueConfig::require_known(const std::vector<std::string>& allowed) const {
    for (const auto& [key, value] : entries_) {
        bool ok = false;
        for (const auto& a : allowed)
            if (key == a) {
                ok = true;
                break;
            }
        if (!ok) throw ConfigError(origin_ + ": unknown key '" + key + "'");
    }
}

std::string KeyValueConfig::serialize() const {
    std::string out;
    for (const auto& [key, value] : entries_) {
        out += key;
        out += " = ";
        out += value;
        out += '\n';
    }
    return out;
}

}  // namespace chaoscope
