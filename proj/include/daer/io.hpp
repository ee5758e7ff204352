#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "daer/error.hpp"
#include "daer/matrix.hpp"

// Little-endian binary primitives, file helpers, the embedding file format,
// and the flat key=value config reader.
namespace daer::io {

inline void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v) { out.push_back(v); }

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_f32(std::vector<std::uint8_t>& out, float v) {
    put_u32(out, std::bit_cast<std::uint32_t>(v));
}

inline void put_f64(std::vector<std::uint8_t>& out, double v) {
    put_u64(out, std::bit_cast<std::uint64_t>(v));
}

// Bounds-checked little-endian reader; throws decode_error on truncation.
class Reader {
  public:
    Reader(const std::uint8_t* p, std::size_t n, std::string what)
        : p_(p), n_(n), what_(std::move(what)) {}

    std::uint8_t u8() {
        require(1);
        return p_[off_++];
    }

    std::uint32_t u32() {
        require(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p_[off_ + i]) << (8 * i);
        off_ += 4;
        return v;
    }

    std::uint64_t u64() {
        require(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p_[off_ + i]) << (8 * i);
        off_ += 8;
        return v;
    }

    float f32() { return std::bit_cast<float>(u32()); }
    double f64() { return std::bit_cast<double>(u64()); }

    std::span<const std::uint8_t> bytes(std::size_t k) {
        require(k);
        std::span<const std::uint8_t> s(p_ + off_, k);
        off_ += k;
        return s;
    }

    bool done() const { return off_ == n_; }
    std::size_t remaining() const { return n_ - off_; }

  private:
    void require(std::size_t k) const {
        if (off_ + k > n_)
            throw decode_error(what_ + ": truncated (need " + std::to_string(k) + " bytes at " +
                               std::to_string(off_) + ", have " + std::to_string(n_ - off_) + ")");
    }

    const std::uint8_t* p_;
    std::size_t n_;
    std::size_t off_ = 0;
    std::string what_;
};

std::vector<std::uint8_t> read_file(const std::string& path);
// Write-temp-then-rename so partially written files never appear at `path`.
void write_file_atomic(const std::string& path, const std::uint8_t* data, std::size_t size);
void write_file_atomic(const std::string& path, const std::vector<std::uint8_t>& data);
void write_text_atomic(const std::string& path, const std::string& text);

void write_matrix_csv(const std::string& path, const Mat& m);

// Flat `key = value` text; '#' starts a comment; blank lines ignored.
std::map<std::string, std::string> parse_kv_text(const std::string& text);
std::map<std::string, std::string> load_kv_file(const std::string& path);

// Typed access over parsed key=value pairs with consumed-key tracking, so
// unknown keys can be rejected after all known ones were read.
class KvReader {
  public:
    explicit KvReader(std::map<std::string, std::string> kv) : kv_(std::move(kv)) {}

    bool has(const std::string& key) const { return kv_.contains(key); }

    std::string get_string(const std::string& key, const std::string& fallback);
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback);
    double get_double(const std::string& key, double fallback);
    bool get_bool(const std::string& key, bool fallback);

    // Throws config_error listing keys never consumed.
    void finish() const;

    const std::map<std::string, std::string>& raw() const { return kv_; }

  private:
    std::map<std::string, std::string> kv_;
    std::set<std::string> consumed_;
};

}  // namespace daer::io
