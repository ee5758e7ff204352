#include "daer/io.hpp"

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

#include "daer/log.hpp"

namespace daer::io {

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open " + path);
    in.seekg(0, std::ios::end);
    const auto size = in.tellg();
    if (size < 0) throw io_error("cannot stat " + path);
    in.seekg(0, std::ios::beg);
    std::vector<std::uint8_t> data(static_cast<std::size_t>(size));
    if (size > 0) in.read(reinterpret_cast<char*>(data.data()), size);
    if (!in) throw io_error("cannot read " + path);
    return data;
}

void write_file_atomic(const std::string& path, const std::uint8_t* data, std::size_t size) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw io_error("cannot open " + tmp + " for writing");
        if (size > 0) out.write(reinterpret_cast<const char*>(data), static_cast<long>(size));
        out.flush();
        if (!out) throw io_error("cannot write " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw io_error("cannot rename " + tmp + " to " + path);
}

void write_file_atomic(const std::string& path, const std::vector<std::uint8_t>& data) {
    write_file_atomic(path, data.data(), data.size());
}

void write_text_atomic(const std::string& path, const std::string& text) {
    write_file_atomic(path, reinterpret_cast<const std::uint8_t*>(text.data()), text.size());
}

void write_matrix_csv(const std::string& path, const Mat& m) {
    std::ostringstream out;
    out.precision(17);
    for (std::size_t i = 0; i < m.rows; ++i) {
        for (std::size_t j = 0; j < m.cols; ++j) {
            if (j > 0) out << ',';
            out << m.at(i, j);
        }
        out << '\n';
    }
    write_text_atomic(path, out.str());
}

namespace {

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

}  // namespace

std::map<std::string, std::string> parse_kv_text(const std::string& text) {
    std::map<std::string, std::string> out;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::string stripped = trim(line);
        if (stripped.empty()) continue;
        const std::size_t eq = stripped.find('=');
        if (eq == std::string::npos)
            throw config_error("config line " + std::to_string(lineno) + ": missing '='");
        const std::string key = trim(stripped.substr(0, eq));
        const std::string value = trim(stripped.substr(eq + 1));
        if (key.empty())
            throw config_error("config line " + std::to_string(lineno) + ": empty key");
        out[key] = value;
    }
    return out;
}

std::map<std::string, std::string> load_kv_file(const std::string& path) {
    std::vector<std::uint8_t> bytes = read_file(path);
    return parse_kv_text(std::string(bytes.begin(), bytes.end()));
}

std::string KvReader::get_string(const std::string& key, const std::string& fallback) {
    consumed_.insert(key);
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
}

std::uint64_t KvReader::get_u64(const std::string& key, std::uint64_t fallback) {
    consumed_.insert(key);
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    try {
        // stoull would wrap "-3" around instead of rejecting it.
        if (!it->second.empty() && it->second[0] == '-')
            throw std::invalid_argument("negative");
        std::size_t pos = 0;
        const std::uint64_t v = std::stoull(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw config_error("config key '" + key + "': expected unsigned integer, got '" +
                           it->second + "'");
    }
}

double KvReader::get_double(const std::string& key, double fallback) {
    consumed_.insert(key);
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    try {
        std::size_t pos = 0;
        const double v = std::stod(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw config_error("config key '" + key + "': expected number, got '" + it->second +
                           "'");
    }
}

bool KvReader::get_bool(const std::string& key, bool fallback) {
    consumed_.insert(key);
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    const std::string& v = it->second;
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw config_error("config key '" + key + "': expected boolean, got '" + v + "'");
}

void KvReader::finish() const {
    std::string unknown;
    for (const auto& [key, value] : kv_)
        if (!consumed_.contains(key)) unknown += (unknown.empty() ? "" : ", ") + key;
    if (!unknown.empty()) throw config_error("unknown config keys: " + unknown);
}

}  // namespace daer::io

namespace daer::log {

namespace {

Level g_threshold = [] {
    const char* env = std::getenv("DAER_LOG");
    if (env == nullptr) return Level::warn;
    if (std::strcmp(env, "debug") == 0) return Level::debug;
    if (std::strcmp(env, "info") == 0) return Level::info;
    if (std::strcmp(env, "warn") == 0) return Level::warn;
    if (std::strcmp(env, "error") == 0) return Level::error;
    if (std::strcmp(env, "off") == 0) return Level::off;
    return Level::warn;
}();

const char* level_name(Level level) {
    switch (level) {
        case Level::debug: return "debug";
        case Level::info: return "info";
        case Level::warn: return "warn";
        case Level::error: return "error";
        default: return "off";
    }
}

}  // namespace

Level threshold() { return g_threshold; }

void set_threshold(Level level) { g_threshold = level; }

void write(Level level, const std::string& msg) {
    if (level < g_threshold || g_threshold == Level::off) return;
    std::fprintf(stderr, "[daer][%s] %s\n", level_name(level), msg.c_str());
}

}  // namespace daer::log
