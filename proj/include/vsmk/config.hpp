#pragma once

// Flat `key = value` settings files with `#` comments.  Later assignments
// win, so command-line overrides are applied by a second merge pass.  The
// serialized form (sorted, one pair per line) is embedded in checkpoints so
// a saved model carries the configuration that produced it.

#include <filesystem>
#include <map>
#include <optional>
#include <string>

namespace vsmk::config {

class Settings {
public:
    Settings() = default;

    static Settings parse_file(const std::filesystem::path& path);
    static Settings parse_string(const std::string& text);

    void set(const std::string& key, const std::string& value);
    void merge(const Settings& overrides);  // overrides win

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    // Typed getters: the _or forms fall back to a default, the plain forms
    // throw ConfigError when the key is missing.  Malformed values always
    // throw ConfigError naming the key.
    std::string get_string(const std::string& key) const;
    std::string get_string_or(const std::string& key, const std::string& fallback) const;
    long get_int(const std::string& key) const;
    long get_int_or(const std::string& key, long fallback) const;
    double get_double(const std::string& key) const;
    double get_double_or(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key) const;
    bool get_bool_or(const std::string& key, bool fallback) const;

    const std::map<std::string, std::string>& entries() const { return values_; }

    std::string serialize() const;  // sorted "key = value" lines

private:
    std::optional<std::string> find(const std::string& key) const;
    std::map<std::string, std::string> values_;
};

}  // namespace vsmk::config
