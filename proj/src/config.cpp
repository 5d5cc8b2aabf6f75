#include "viv/config.hpp"

#include "viv/params.hpp"

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <sstream>

namespace viv {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

} // namespace

Config Config::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ValidationError("cannot open config file: " + path);
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_string(ss.str());
}

Config Config::parse_string(const std::string& text) {
    Config cfg;
    std::istringstream in(text);
    std::string line;
    std::string section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']') {
                throw ValidationError("config line " + std::to_string(lineno) +
                                      ": malformed section header");
            }
            section = trim(t.substr(1, t.size() - 2));
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ValidationError("config line " + std::to_string(lineno) +
                                  ": expected key=value");
        }
        std::string key = trim(t.substr(0, eq));
        std::string value = trim(t.substr(eq + 1));
        if (key.empty()) {
            throw ValidationError("config line " + std::to_string(lineno) +
                                  ": empty key");
        }
        if (!section.empty()) key = section + "." + key;
        if (cfg.values_.count(key)) {
            throw ValidationError("config: duplicate key '" + key + "'");
        }
        cfg.values_[key] = value;
    }
    return cfg;
}

void Config::set(const std::string& key, const std::string& value) {
    values_[key] = value;
}

bool Config::has(const std::string& key) const {
    return values_.count(key) != 0;
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    touched_[key] = true;
    return it->second;
}

double Config::get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    touched_[key] = true;
    try {
        std::size_t pos = 0;
        const double v = std::stod(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ValidationError("config key '" + key + "': not a number: " + it->second);
    }
}

int Config::get_int(const std::string& key, int fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    touched_[key] = true;
    try {
        std::size_t pos = 0;
        const int v = std::stoi(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ValidationError("config key '" + key + "': not an integer: " + it->second);
    }
}

bool Config::get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    touched_[key] = true;
    const std::string& v = it->second;
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ValidationError("config key '" + key + "': not a boolean: " + v);
}

std::string Config::require_string(const std::string& key) const {
    if (!has(key)) throw ValidationError("config: missing required key '" + key + "'");
    return get_string(key, "");
}

double Config::require_double(const std::string& key) const {
    if (!has(key)) throw ValidationError("config: missing required key '" + key + "'");
    return get_double(key, 0.0);
}

std::vector<std::string> Config::keys() const {
    std::vector<std::string> out;
    out.reserve(values_.size());
    for (const auto& kv : values_) out.push_back(kv.first);
    return out;
}

void Config::check_known_keys(const std::vector<std::string>& known) const {
    for (const auto& kv : values_) {
        if (std::find(known.begin(), known.end(), kv.first) == known.end()) {
            throw ValidationError("config: unknown key '" + kv.first + "'");
        }
    }
}

std::vector<std::string> Config::unused_keys() const {
    std::vector<std::string> out;
    for (const auto& kv : values_) {
        if (!touched_.count(kv.first)) out.push_back(kv.first);
    }
    return out;
}

std::string Config::to_string() const {
    std::ostringstream out;
    for (const auto& kv : values_) {
        out << kv.first << " = " << kv.second << "\n";
    }
    return out.str();
}

std::string Config::hash() const {
    const std::string s = to_string();
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    std::ostringstream out;
    out << std::hex << h;
    return out.str();
}

} // namespace viv
