#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace fedra {

/// Incremental SHA-256 (FIPS 180-4). Used for frozen-parameter digests and
/// run ids; self-contained so the core library stays dependency-free.
class Sha256 {
  public:
    Sha256();

    void update(std::span<const std::uint8_t> data);
    void update(const std::string& s);
    void update_doubles(std::span<const double> values);

    /// Finalize and return lowercase hex digest. The object is consumed.
    std::string hex_digest();

  private:
    void process_block(const std::uint8_t* block);

    std::uint32_t state_[8];
    std::uint64_t total_bytes_ = 0;
    std::uint8_t buffer_[64];
    std::size_t buffer_len_ = 0;
};

std::string sha256_hex(const std::string& s);

}  // namespace fedra
