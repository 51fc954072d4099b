#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

namespace matres {

// Flat `key = value` run configuration. One namespace of keys, no nesting;
// resolved configs are dumped back in sorted order so run records diff cleanly.
class KVConfig {
public:
    static KVConfig parse_file(const std::string& path);
    static KVConfig parse_text(const std::string& text, const std::string& origin = "<text>");

    bool has(const std::string& key) const { return kv_.count(key) != 0; }
    void set(const std::string& key, const std::string& value) { kv_[key] = value; }

    const std::string& get_str(const std::string& key) const;
    std::string get_str(const std::string& key, const std::string& fallback) const;
    long long get_int(const std::string& key, long long fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    uint64_t get_u64(const std::string& key, uint64_t fallback) const;

    // Unknown keys are configuration mistakes, not extensions.
    void validate_keys(const std::set<std::string>& allowed) const;

    void merge_overrides(const KVConfig& other);

    std::string dump_sorted() const;
    const std::map<std::string, std::string>& entries() const { return kv_; }

private:
    std::map<std::string, std::string> kv_;
};

}  // namespace matres
