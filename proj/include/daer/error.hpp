#pragma once

#include <stdexcept>
#include <string>

namespace daer {

// Malformed or truncated on-disk data (bad magic, version, counts, EOF mid-record).
struct decode_error : std::runtime_error {
    explicit decode_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem-level failure (open, read, write, rename).
struct io_error : std::runtime_error {
    explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape mismatch between operands.
struct dim_error : std::invalid_argument {
    explicit dim_error(const std::string& msg) : std::invalid_argument(msg) {}
};

// Bad configuration value or unknown key.
struct config_error : std::invalid_argument {
    explicit config_error(const std::string& msg) : std::invalid_argument(msg) {}
};

}  // namespace daer
