#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace viv {

/// Flat key=value configuration with optional [section] headers. A key inside
/// [sec] is stored as "sec.key". Lines starting with '#' or ';' are comments.
class Config {
public:
    Config() = default;

    static Config parse_file(const std::string& path);
    static Config parse_string(const std::string& text);

    /// Set (or override) a value. Used for CLI flag overrides.
    void set(const std::string& key, const std::string& value);

    bool has(const std::string& key) const;

    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    int get_int(const std::string& key, int fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    /// Required-key variants; throw ValidationError when missing.
    std::string require_string(const std::string& key) const;
    double require_double(const std::string& key) const;

    /// Keys in deterministic (sorted) order.
    std::vector<std::string> keys() const;

    /// Throw ValidationError if any key is not in `known`.
    void check_known_keys(const std::vector<std::string>& known) const;

    /// Keys never queried through any accessor so far.
    std::vector<std::string> unused_keys() const;

    /// Serialized sorted key=value form (the "effective config" echo).
    std::string to_string() const;

    /// FNV-1a hash of to_string(), hex-encoded; identifies a run.
    std::string hash() const;

private:
    std::map<std::string, std::string> values_;
    mutable std::map<std::string, bool> touched_;
};

} // namespace viv
