#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pathcons {

/// Incremental SHA-256 (OpenSSL EVP underneath).
class Sha256 {
public:
    Sha256();
    ~Sha256();
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;

    void update(const void* data, std::size_t len);
    void update(const std::string& s) { update(s.data(), s.size()); }
    void update(const std::vector<std::uint8_t>& b) { update(b.data(), b.size()); }

    /// Lowercase hex digest; the object must not be reused afterwards.
    std::string hex_digest();

private:
    void* ctx_ = nullptr;
};

std::string sha256_hex(const std::string& data);
std::string sha256_hex(const std::vector<std::uint8_t>& data);

}  // namespace pathcons
