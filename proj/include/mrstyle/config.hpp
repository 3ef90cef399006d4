#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <set>
#include <stdexcept>
#include <string>

namespace mrstyle {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Line-based `key = value` text; '#' starts a comment. Keys are tracked
/// so callers can reject the ones nobody consumed.
class KeyValueConfig {
public:
    KeyValueConfig() = default;
    static KeyValueConfig parse(std::istream& in);
    static KeyValueConfig load(const std::filesystem::path& path);

    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    [[nodiscard]] bool has(const std::string& key) const { return values_.count(key) != 0; }

    [[nodiscard]] std::string get_string(const std::string& key, const std::string& fallback) const;
    [[nodiscard]] long long get_int(const std::string& key, long long fallback) const;
    [[nodiscard]] double get_double(const std::string& key, double fallback) const;

    /// Throws if any key was never read through a getter.
    void reject_unused() const;
    /// Throws on the first key not in `known`.
    void reject_unknown(const std::set<std::string>& known) const;

private:
    std::map<std::string, std::string> values_;
    std::map<std::string, int> lines_;
    mutable std::set<std::string> used_;
};

}  // namespace mrstyle
