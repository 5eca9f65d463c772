#include "fwrl/keyvalue.hpp"

#include "fwrl/common.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace fwrl {

namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

}  // namespace

KeyValueFile KeyValueFile::parse(std::string_view text, std::string_view origin) {
    KeyValueFile kv;
    kv.origin_ = std::string(origin);
    std::size_t line_no = 0;
    while (!text.empty()) {
        ++line_no;
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);

        std::string_view comment;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) {
            comment = trim(line.substr(hash + 1));
            line = line.substr(0, hash);
        }
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError(std::string(origin) + ":" + std::to_string(line_no) +
                              ": expected `key = value`");
        }
        const auto key = trim(line.substr(0, eq));
        if (key.empty()) {
            throw ConfigError(std::string(origin) + ":" + std::to_string(line_no) + ": empty key");
        }
        kv.set(key, trim(line.substr(eq + 1)), comment);
    }
    return kv;
}

KeyValueFile KeyValueFile::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.string());
}

std::string KeyValueFile::serialize() const {
    std::string out;
    for (const auto& e : entries_) {
        out += e.key;
        out += " = ";
        out += e.value;
        if (!e.comment.empty()) {
            out += "  # ";
            out += e.comment;
        }
        out += '\n';
    }
    return out;
}

void KeyValueFile::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << serialize();
}

const KeyValueFile::Entry* KeyValueFile::find(std::string_view key) const {
    for (const auto& e : entries_) {
        if (e.key == key) return &e;
    }
    return nullptr;
}

bool KeyValueFile::has(std::string_view key) const { return find(key) != nullptr; }

const std::string& KeyValueFile::get_string(std::string_view key) const {
    const auto* e = find(key);
    if (!e) throw ConfigError(origin_ + ": missing key `" + std::string(key) + "`");
    return e->value;
}

std::string KeyValueFile::get_string(std::string_view key, std::string_view fallback) const {
    const auto* e = find(key);
    return e ? e->value : std::string(fallback);
}

double KeyValueFile::get_double(std::string_view key) const {
    const auto& v = get_string(key);
    double out = 0.0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
        throw ConfigError(origin_ + ": key `" + std::string(key) + "` is not a number: " + v);
    }
    return out;
}

double KeyValueFile::get_double(std::string_view key, double fallback) const {
    return has(key) ? get_double(key) : fallback;
}

long KeyValueFile::get_int(std::string_view key) const {
    const auto& v = get_string(key);
    long out = 0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
        throw ConfigError(origin_ + ": key `" + std::string(key) + "` is not an integer: " + v);
    }
    return out;
}

long KeyValueFile::get_int(std::string_view key, long fallback) const {
    return has(key) ? get_int(key) : fallback;
}

bool KeyValueFile::get_bool(std::string_view key) const {
    const auto& v = get_string(key);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError(origin_ + ": key `" + std::string(key) + "` is not a boolean: " + v);
}

bool KeyValueFile::get_bool(std::string_view key, bool fallback) const {
    return has(key) ? get_bool(key) : fallback;
}

void KeyValueFile::set(std::string_view key, std::string_view value, std::string_view comment) {
    for (auto& e : entries_) {
        if (e.key == key) {
            e.value = std::string(value);
            if (!comment.empty()) e.comment = std::string(comment);
            return;
        }
    }
    entries_.push_back({std::string(key), std::string(value), std::string(comment)});
}

void KeyValueFile::set(std::string_view key, double value, std::string_view comment) {
    set(key, std::string_view(format_double(value)), comment);
}

void KeyValueFile::set(std::string_view key, long value, std::string_view comment) {
    set(key, std::string_view(std::to_string(value)), comment);
}

void KeyValueFile::set(std::string_view key, bool value, std::string_view comment) {
    set(key, std::string_view(value ? "true" : "false"), comment);
}

void KeyValueFile::require_schema(std::string_view expected) const {
    const auto got = get_string("schema", "");
    if (got != expected) {
        throw ConfigError(origin_ + ": expected schema `" + std::string(expected) + "`, got `" +
                          got + "`");
    }
}

}  // namespace fwrl
