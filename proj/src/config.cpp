#include "podgen/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace podgen {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

KeyValueConfig KeyValueConfig::from_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot open " + path);
    std::ostringstream buf;
    buf << is.rdbuf();
    return from_string(buf.str());
}

KeyValueConfig KeyValueConfig::from_string(const std::string& text) {
    KeyValueConfig config;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::string t = trim(line);
        if (t.empty()) continue;
        const std::size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config: line " + std::to_string(lineno) +
                                     ": expected key = value");
        const std::string key = trim(t.substr(0, eq));
        if (key.empty())
            throw std::runtime_error("config: line " + std::to_string(lineno) + ": empty key");
        config.values_[key] = trim(t.substr(eq + 1));
    }
    return config;
}

std::string KeyValueConfig::get_str(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

std::string KeyValueConfig::require_str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw std::runtime_error("config: missing required key: " + key);
    return it->second;
}

long KeyValueConfig::get_int(const std::string& key, long fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::size_t pos = 0;
    const long v = std::stol(it->second, &pos);
    if (pos != it->second.size())
        throw std::runtime_error("config: key " + key + ": not an integer: " + it->second);
    return v;
}

double KeyValueConfig::get_float(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::size_t pos = 0;
    const double v = std::stod(it->second, &pos);
    if (pos != it->second.size())
        throw std::runtime_error("config: key " + key + ": not a number: " + it->second);
    return v;
}

}  // namespace podgen
