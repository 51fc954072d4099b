#include "matres/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace matres {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

KVConfig KVConfig::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_text(ss.str(), path);
}

KVConfig KVConfig::parse_text(const std::string& text, const std::string& origin) {
    KVConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config: " + origin + ":" + std::to_string(lineno) +
                                     ": expected 'key = value', got '" + t + "'");
        const std::string key = trim(t.substr(0, eq));
        const std::string val = trim(t.substr(eq + 1));
        if (key.empty())
            throw std::runtime_error("config: " + origin + ":" + std::to_string(lineno) +
                                     ": empty key");
        cfg.kv_[key] = val;
    }
    return cfg;
}

const std::string& KVConfig::get_str(const std::string& key) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) throw std::runtime_error("config: missing required key '" + key + "'");
    return it->second;
}

std::string KVConfig::get_str(const std::string& key, const std::string& fallback) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
}

long long KVConfig::get_int(const std::string& key, long long fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    size_t pos = 0;
    const long long v = std::stoll(it->second, &pos);
    if (pos != it->second.size())
        throw std::runtime_error("config: key '" + key + "' is not an integer: " + it->second);
    return v;
}

double KVConfig::get_double(const std::string& key, double fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    size_t pos = 0;
    const double v = std::stod(it->second, &pos);
    if (pos != it->second.size())
        throw std::runtime_error("config: key '" + key + "' is not a number: " + it->second);
    return v;
}

bool KVConfig::get_bool(const std::string& key, bool fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    std::string v = it->second;
    std::transform(v.begin(), v.end(), v.begin(), ::tolower);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw std::runtime_error("config: key '" + key + "' is not a boolean: " + it->second);
}

uint64_t KVConfig::get_u64(const std::string& key, uint64_t fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    size_t pos = 0;
    const unsigned long long v = std::stoull(it->second, &pos);
    if (pos != it->second.size())
        throw std::runtime_error("config: key '" + key + "' is not an unsigned integer: " +
                                 it->second);
    return v;
}

void KVConfig::validate_keys(const std::set<std::string>& allowed) const {
    std::vector<std::string> unknown;
    for (const auto& [k, _] : kv_)
        if (!allowed.count(k)) unknown.push_back(k);
    if (!unknown.empty()) {
        std::string msg = "config: unknown keys:";
        for (const auto& k : unknown) msg += " '" + k + "'";
        throw std::runtime_error(msg);
    }
}

void KVConfig::merge_overrides(const KVConfig& other) {
    for (const auto& [k, v] : other.kv_) kv_[k] = v;
}

std::string KVConfig::dump_sorted() const {
    std::ostringstream os;
    for (const auto& [k, v] : kv_) os << k << " = " << v << "\n";
    return os.str();
}

}  // namespace matres
