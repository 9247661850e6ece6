#pragma once

#include <map>
#include <string>

namespace podgen {

// Line-oriented `key = value` config file; '#' starts a comment.
class KeyValueConfig {
public:
    static KeyValueConfig from_file(const std::string& path);
    static KeyValueConfig from_string(const std::string& text);

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    std::string get_str(const std::string& key, const std::string& fallback) const;
    std::string require_str(const std::string& key) const;
    long get_int(const std::string& key, long fallback) const;
    double get_float(const std::string& key, double fallback) const;

    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

}  // namespace podgen
