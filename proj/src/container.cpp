#include "stochdet/container.hpp"

#include <algorithm>
#include <bit>
#include <fstream>

namespace stochdet {

std::vector<std::uint8_t> encode_container(const Container& c) {
  nlohmann::json manifest = c.manifest;
  manifest["blob_bytes"] = c.blob.size() * 8;
  const std::string text = manifest.dump();
  std::vector<std::uint8_t> out(text.begin(), text.end());
  out.push_back('\n');
  out.reserve(out.size() + c.blob.size() * 8);
  for (double v : c.blob) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
  }
  return out;
}

Container decode_container(std::span<const std::uint8_t> bytes) {
  const auto nl = std::find(bytes.begin(), bytes.end(), std::uint8_t{'\n'});
  if (nl == bytes.end()) throw FormatError("container: missing manifest terminator");
  Container c;
  try {
    c.manifest = nlohmann::json::parse(bytes.begin(), nl);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("container: bad manifest: ") + e.what());
  }
  const auto blob_start = static_cast<std::size_t>(nl - bytes.begin()) + 1;
  const std::size_t blob_len = bytes.size() - blob_start;
  if (!c.manifest.contains("blob_bytes") || !c.manifest["blob_bytes"].is_number_unsigned())
    throw FormatError("container: manifest lacks blob_bytes");
  const auto declared = c.manifest["blob_bytes"].get<std::size_t>();
  if (declared != blob_len)
    throw FormatError("container: manifest declares " + std::to_string(declared) +
                      " blob bytes, found " + std::to_string(blob_len));
  if (blob_len % 8) throw FormatError("container: blob length is not a multiple of 8");
  c.blob.resize(blob_len / 8);
  for (std::size_t i = 0; i < c.blob.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= std::uint64_t{bytes[blob_start + 8 * i + b]} << (8 * b);
    c.blob[i] = std::bit_cast<double>(bits);
  }
  return c;
}

void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace stochdet
