#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace memo {

// Flat `key = value` configuration. Blank lines and lines starting with '#'
// are ignored. Later assignments override earlier ones.
class KeyValueConfig {
public:
    static KeyValueConfig parse(const std::string& text, const std::string& origin = "<string>");
    static KeyValueConfig load(const std::filesystem::path& path);

    void set(const std::string& key, const std::string& value);
    bool has(const std::string& key) const;
    const std::string* find(const std::string& key) const;

    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<double> get_doubles(const std::string& key, std::vector<double> fallback) const;

    // Values from `other` win.
    void merge(const KeyValueConfig& other);

    const std::map<std::string, std::string>& entries() const noexcept { return entries_; }

    // Sorted by key, one `key = value` per line.
    std::string to_string() const;

private:
    std::map<std::string, std::string> entries_;
};

}  // namespace memo
