#include "vsmk/config.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include "vsmk/errors.hpp"

namespace vsmk::config {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

}  // namespace

Settings Settings::parse_file(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open settings file: " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    try {
        return parse_string(ss.str());
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

Settings Settings::parse_string(const std::string& text) {
    Settings out;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) +
                              ": expected `key = value`, got: " + line);
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError("line " + std::to_string(lineno) + ": empty key");
        out.set(key, value);
    }
    return out;
}

void Settings::set(const std::string& key, const std::string& value) {
    values_[key] = value;
}

void Settings::merge(const Settings& overrides) {
    for (const auto& [k, v] : overrides.values_) values_[k] = v;
}

std::optional<std::string> Settings::find(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
}

std::string Settings::get_string(const std::string& key) const {
    auto v = find(key);
    if (!v) throw ConfigError("missing setting: " + key);
    return *v;
}

std::string Settings::get_string_or(const std::string& key,
                                    const std::string& fallback) const {
    return find(key).value_or(fallback);
}

long Settings::get_int(const std::string& key) const {
    const std::string v = get_string(key);
    try {
        std::size_t used = 0;
        const long out = std::stol(v, &used);
        if (used != v.size()) throw std::invalid_argument("trailing characters");
        return out;
    } catch (const std::exception&) {
        throw ConfigError("setting " + key + ": not an integer: " + v);
    }
}

long Settings::get_int_or(const std::string& key, long fallback) const {
    return has(key) ? get_int(key) : fallback;
}

double Settings::get_double(const std::string& key) const {
    const std::string v = get_string(key);
    try {
        std::size_t used = 0;
        const double out = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument("trailing characters");
        return out;
    } catch (const std::exception&) {
        throw ConfigError("setting " + key + ": not a number: " + v);
    }
}

double Settings::get_double_or(const std::string& key, double fallback) const {
    return has(key) ? get_double(key) : fallback;
}

bool Settings::get_bool(const std::string& key) const {
    const std::string v = get_string(key);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("setting " + key + ": not a boolean: " + v);
}

bool Settings::get_bool_or(const std::string& key, bool fallback) const {
    return has(key) ? get_bool(key) : fallback;
}

std::string Settings::serialize() const {
    std::string out;
    for (const auto& [k, v] : values_) {
        out += k;
        out += " = ";
        out += v;
        out += "\n";
    }
    return out;
}

}  // namespace vsmk::config
