#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include <json.hpp>

namespace stochdet {

/// A compact JSON manifest on one line, a newline, then a little-endian
/// float64 blob. The manifest's "blob_bytes" field must match the blob.
struct Container {
  nlohmann::json manifest;
  std::vector<double> blob;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<std::uint8_t> encode_container(const Container& c);
Container decode_container(std::span<const std::uint8_t> bytes);

void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace stochdet
