#pragma once

#include <map>
#include <string>

#include "gsr/error.hpp"

namespace gsr {

// Line-based "key = value" configuration with '#' comments. CLI flags
// override file values by calling set() after load().
class Config {
public:
    static Config load(const std::string& path);
    static Config from_text(const std::string& text, const std::string& origin = "<text>");

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    std::string str(const std::string& key, const std::string& fallback) const;
    long long integer(const std::string& key, long long fallback) const;
    double number(const std::string& key, double fallback) const;
    bool flag(const std::string& key, bool fallback) const;

    const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

} // namespace gsr
