#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace diffcal {

// Incremental SHA-256 (FIPS 180-4). Used for config hashes and for checking
// that frozen weights really stayed frozen.
class Sha256 {
public:
    Sha256();
    void update(const void* data, std::size_t len);
    void update(const std::string& s) { update(s.data(), s.size()); }
    // Finalizes; the object must not be updated afterwards.
    std::string hex_digest();

private:
    void process_block(const std::uint8_t* p);
    std::uint32_t h_[8];
    std::uint8_t buf_[64];
    std::size_t buf_len_ = 0;
    std::uint64_t total_ = 0;
    bool done_ = false;
};

std::string sha256_hex(const std::string& s);
std::string sha256_hex(const std::vector<double>& v); // raw little-endian f64 bytes
std::string sha256_file_hex(const std::string& path);

} // namespace diffcal
