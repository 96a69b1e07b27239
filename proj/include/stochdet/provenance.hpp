#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace stochdet {

std::string sha256_hex(std::string_view data);
std::string sha256_hex(std::span<const std::uint8_t> data);

struct Provenance {
  std::string config_hash;
  std::uint64_t base_seed = 0;
  std::string tool_version;

  friend bool operator==(const Provenance&, const Provenance&) = default;
};

// Sealing adds the provenance fields plus a digest of the payload, so any edit
// to the payload (or to the digest) is detectable.

/// Pretty-printed JSON with a "provenance" member; `payload` must be an object
/// without one.
std::string seal_json(const nlohmann::json& payload, const Provenance& p);
/// CSV preceded by one "# key=value ..." provenance line.
std::string seal_csv(const std::string& body, const Provenance& p);
/// Re-encodes a container with manifest["provenance"].
std::vector<std::uint8_t> seal_container(std::span<const std::uint8_t> container_bytes, const Provenance& p);

/// Strips provenance for consumers; throws FormatError when missing or malformed.
nlohmann::json open_json(const std::string& text);
std::string open_csv(const std::string& text);

struct ArtifactCheck {
  std::filesystem::path path;
  std::optional<Provenance> provenance;
  bool digest_ok = false;
  std::string problem;  // empty when the file is intact
};

/// Chooses the format by extension (.json, .csv, .bin) and recomputes the digest.
ArtifactCheck check_artifact(const std::filesystem::path& path);

std::string read_text(const std::filesystem::path& path);

}  // namespace stochdet
