#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace fwrl {

/**
 * @brief Flat `key = value` text document with `#` comments.
 *
 * Used for model parameter files, PID gain files, run configs and run
 * manifests. The first key is conventionally `schema`, naming the document
 * type and version. Keys keep insertion order so serialized files diff well.
 */
class KeyValueFile {
public:
    struct Entry {
        std::string key;
        std::string value;
        std::string comment;
    };

    KeyValueFile() = default;

    static KeyValueFile parse(std::string_view text, std::string_view origin = "<memory>");
    static KeyValueFile load(const std::filesystem::path& path);

    std::string serialize() const;
    void save(const std::filesystem::path& path) const;

    bool has(std::string_view key) const;
    const std::string& get_string(std::string_view key) const;
    std::string get_string(std::string_view key, std::string_view fallback) const;
    double get_double(std::string_view key) const;
    double get_double(std::string_view key, double fallback) const;
    long get_int(std::string_view key) const;
    long get_int(std::string_view key, long fallback) const;
    bool get_bool(std::string_view key) const;
    bool get_bool(std::string_view key, bool fallback) const;

    void set(std::string_view key, std::string_view value, std::string_view comment = {});
    void set(std::string_view key, const char* value, std::string_view comment = {}) {
        set(key, std::string_view(value), comment);
    }
    void set(std::string_view key, double value, std::string_view comment = {});
    void set(std::string_view key, long value, std::string_view comment = {});
    void set(std::string_view key, int value, std::string_view comment = {}) {
        set(key, static_cast<long>(value), comment);
    }
    void set(std::string_view key, bool value, std::string_view comment = {});

    /// Throws ConfigError unless the `schema` key equals `expected`.
    void require_schema(std::string_view expected) const;

    const std::vector<Entry>& entries() const { return entries_; }
    const std::string& origin() const { return origin_; }

private:
    const Entry* find(std::string_view key) const;

    std::vector<Entry> entries_;
    std::string origin_;
};

}  // namespace fwrl
