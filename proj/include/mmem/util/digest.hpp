#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mmem {

// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view data);

// Incremental SHA-256 for digests that span several payloads.
class Sha256 {
public:
    Sha256();
    ~Sha256();
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;

    void update(std::string_view data);
    std::string hex_digest();
    std::array<std::uint8_t, 32> digest();

private:
    void* ctx_;
};

std::string base64_encode(std::span<const std::uint8_t> bytes);
// Throws Parse on malformed input.
std::vector<std::uint8_t> base64_decode(std::string_view text);

// Little-endian IEEE-754 doubles, base64 encoded; exact round trip.
std::string encode_vector(std::span<const double> values);
std::vector<double> decode_vector(std::string_view text);

}  // namespace mmem
