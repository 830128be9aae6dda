#ifndef KAM_DIGEST_HPP
#define KAM_DIGEST_HPP

#include <cstdint>
#include <string>
#include <vector>

namespace kam {

/// SHA-256 hex digest of a byte buffer.
std::string sha256_hex(const void* data, size_t len);
std::string sha256_hex(const std::string& s);

/// SHA-256 hex digest of a file's contents.
std::string sha256_file(const std::string& path);

} // namespace kam

#endif
