#include "stochdet/provenance.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "stochdet/container.hpp"
#include "stochdet/dataset.hpp"

namespace stochdet {

using nlohmann::json;

std::string sha256_hex(std::span<const std::uint8_t> data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256: digest failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

std::string sha256_hex(std::string_view data) {
  return sha256_hex(std::span(reinterpret_cast<const std::uint8_t*>(data.data()), data.size()));
}

namespace {

json provenance_json(const Provenance& p, const std::string& digest) {
  return {{"config_hash", p.config_hash},
          {"base_seed", p.base_seed},
          {"tool_version", p.tool_version},
          {"content_sha256", digest}};
}

Provenance provenance_from_json(const json& j) {
  try {
    return {j.at("config_hash").get<std::string>(), j.at("base_seed").get<std::uint64_t>(),
            j.at("tool_version").get<std::string>()};
  } catch (const json::exception& e) {
    throw FormatError(std::string("provenance: ") + e.what());
  }
}

std::string container_digest(const json& manifest_without_provenance, std::span<const std::uint8_t> blob) {
  std::string text = manifest_without_provenance.dump();
  text.push_back('\n');
  text.append(reinterpret_cast<const char*>(blob.data()), blob.size());
  return sha256_hex(text);
}

// Splits "# k=v k=v\n<body>"; returns false if the first line is not a provenance line.
bool split_csv(const std::string& text, std::map<std::string, std::string>& fields, std::string& body) {
  if (text.rfind("# ", 0) != 0) return false;
  const auto nl = text.find('\n');
  if (nl == std::string::npos) return false;
  std::istringstream line(text.substr(2, nl - 2));
  std::string token;
  while (line >> token) {
    const auto eq = token.find('=');
    if (eq == std::string::npos) return false;
    fields[token.substr(0, eq)] = token.substr(eq + 1);
  }
  body = text.substr(nl + 1);
  return true;
}

}  // namespace

std::string seal_json(const json& payload, const Provenance& p) {
  if (!payload.is_object() || payload.contains("provenance"))
    throw std::invalid_argument("seal_json: payload must be an object without provenance");
  json out = payload;
  out["provenance"] = provenance_json(p, sha256_hex(payload.dump()));
  return out.dump(2) + "\n";
}

std::string seal_csv(const std::string& body, const Provenance& p) {
  return "# config_hash=" + p.config_hash + " base_seed=" + std::to_string(p.base_seed) +
         " tool_version=" + p.tool_version + " content_sha256=" + sha256_hex(body) + "\n" + body;
}

std::vector<std::uint8_t> seal_container(std::span<const std::uint8_t> container_bytes, const Provenance& p) {
  const auto nl = std::find(container_bytes.begin(), container_bytes.end(), std::uint8_t{'\n'});
  Container c = decode_container(container_bytes);
  c.manifest.erase("provenance");
  const auto blob = container_bytes.subspan(static_cast<std::size_t>(nl - container_bytes.begin()) + 1);
  json unsealed = c.manifest;
  unsealed["blob_bytes"] = blob.size();
  c.manifest["provenance"] = provenance_json(p, container_digest(unsealed, blob));
  return encode_container(c);
}

json open_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("json artifact: ") + e.what());
  }
  if (!j.is_object() || !j.contains("provenance")) throw FormatError("json artifact: missing provenance");
  j.erase("provenance");
  return j;
}

std::string open_csv(const std::string& text) {
  std::map<std::string, std::string> fields;
  std::string body;
  if (!split_csv(text, fields, body)) throw FormatError("csv artifact: missing provenance line");
  return body;
}

ArtifactCheck check_artifact(const std::filesystem::path& path) {
  ArtifactCheck r;
  r.path = path;
  try {
    const auto ext = path.extension().string();
    if (ext == ".json") {
      json j = json::parse(read_text(path));
      if (!j.is_object() || !j.contains("provenance")) {
        r.problem = "no provenance";
        return r;
      }
      const json prov = j["provenance"];
      r.provenance = provenance_from_json(prov);
      j.erase("provenance");
      r.digest_ok = prov.value("content_sha256", "") == sha256_hex(j.dump());
    } else if (ext == ".csv") {
      std::map<std::string, std::string> f;
      std::string body;
      if (!split_csv(read_text(path), f, body) || !f.count("config_hash") || !f.count("base_seed") ||
          !f.count("tool_version") || !f.count("content_sha256")) {
        r.problem = "no provenance";
        return r;
      }
      r.provenance = Provenance{f["config_hash"], std::stoull(f["base_seed"]), f["tool_version"]};
      r.digest_ok = f["content_sha256"] == sha256_hex(body);
    } else if (ext == ".bin") {
      const auto bytes = read_file_bytes(path);
      const std::span<const std::uint8_t> all(bytes);
      const auto nl = std::find(all.begin(), all.end(), std::uint8_t{'\n'});
      Container c = decode_container(all);
      if (!c.manifest.contains("provenance")) {
        r.problem = "no provenance";
        return r;
      }
      const json prov = c.manifest["provenance"];
      r.provenance = provenance_from_json(prov);
      c.manifest.erase("provenance");
      const auto blob = all.subspan(static_cast<std::size_t>(nl - all.begin()) + 1);
      r.digest_ok = prov.value("content_sha256", "") == container_digest(c.manifest, blob);
    } else {
      r.problem = "unrecognized artifact type";
      return r;
    }
    if (!r.digest_ok) r.problem = "content digest mismatch";
  } catch (const std::exception& e) {
    r.problem = e.what();
  }
  return r;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace stochdet
