#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace dmlm {

inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string to_hex(std::uint64_t v);

/// Write via a temp file + rename so concurrent readers never observe a
/// partial file.
void atomic_write_file(const std::string& path, const std::string& contents);

std::string read_file(const std::string& path);

bool file_exists(const std::string& path);

void ensure_dir(const std::string& path);

/// Shortest round-trip decimal form of a double ("%.17g"), used anywhere
/// a logged value must reload bit-exactly.
std::string format_double(double v);

}  // namespace dmlm
