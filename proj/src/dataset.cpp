#include "stochdet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "stochdet/rng.hpp"

namespace stochdet {

void Dataset::validate() const {
  if (images.size() != labels.size())
    throw std::invalid_argument("dataset: " + std::to_string(images.size()) + " images but " +
                                std::to_string(labels.size()) + " labels");
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] >= class_count)
      throw std::invalid_argument("dataset: label " + std::to_string(labels[i]) + " at " +
                                  std::to_string(i) + " >= class count " +
                                  std::to_string(class_count));
}

std::pair<Tensor, std::size_t> synth_sample(std::uint64_t seed, std::uint64_t index,
                                            std::size_t image_size) {
  if (image_size < 12) throw std::invalid_argument("synth: image_size must be >= 12");
  CounterStream rng(derive(seed, name_key("synth"), index));
  const std::size_t n = image_size;
  const auto label = static_cast<std::size_t>(rng.below(kSynthClasses));

  const std::size_t min_side = (2 * n) / 5, max_side = (3 * n) / 5;
  const std::size_t side = min_side + rng.below(max_side - min_side + 1);
  const std::size_t top = rng.below(n - side + 1), left = rng.below(n - side + 1);
  const double intensity = rng.uniform(0.3, 0.8);
  const std::size_t mid = side / 2;

  Tensor img({1, n, n});
  for (std::size_t r = 0; r < side; ++r) {
    for (std::size_t c = 0; c < side; ++c) {
      bool on = false;
      switch (static_cast<SynthPattern>(label)) {
        case SynthPattern::filled_square: on = true; break;
        case SynthPattern::hollow_square: on = r == 0 || c == 0 || r + 1 == side || c + 1 == side; break;
        case SynthPattern::cross: on = r == mid || c == mid; break;
        case SynthPattern::diagonal_stripe: on = (r > c ? r - c : c - r) <= 1; break;
      }
      if (on) img.at(0, top + r, left + c) = intensity;
    }
  }
  for (auto& v : img.data()) v = std::clamp(v + rng.uniform(-0.1, 0.1), 0.0, 1.0);
  return {std::move(img), label};
}

Dataset synth_dataset(std::uint64_t seed, std::int64_t count, std::size_t image_size,
                      std::uint64_t first_index) {
  if (count <= 0) throw std::invalid_argument("synth: count must be positive");
  Dataset ds;
  ds.class_count = kSynthClasses;
  ds.images.reserve(static_cast<std::size_t>(count));
  ds.labels.reserve(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) {
    auto [img, label] = synth_sample(seed, first_index + static_cast<std::uint64_t>(i), image_size);
    ds.images.push_back(std::move(img));
    ds.labels.push_back(label);
  }
  return ds;
}

Tensor IdxArray::as_tensor() const {
  std::vector<double> v(payload.size());
  std::transform(payload.begin(), payload.end(), v.begin(), [](std::uint8_t b) { return b / 255.0; });
  return Tensor(shape, std::move(v));
}

std::vector<std::size_t> IdxArray::as_labels() const {
  return {payload.begin(), payload.end()};
}

IdxArray parse_idx(std::span<const std::uint8_t> bytes) {
  using K = IdxError::Kind;
  if (bytes.size() < 4) throw IdxError(K::truncated, "idx: header needs 4 bytes, got " + std::to_string(bytes.size()));
  if (bytes[0] != 0 || bytes[1] != 0) throw IdxError(K::bad_magic, "idx: magic must start with two zero bytes");
  if (bytes[2] != 0x08)
    throw IdxError(K::unsupported_type, "idx: unsupported type code " + std::to_string(bytes[2]));
  const std::size_t dims = bytes[3];
  if (dims == 0) throw IdxError(K::bad_magic, "idx: dimension count must be positive");
  if (bytes.size() < 4 + 4 * dims)
    throw IdxError(K::truncated, "idx: header declares " + std::to_string(dims) + " extents but stream has " +
                                     std::to_string(bytes.size()) + " bytes");
  IdxArray out;
  for (std::size_t d = 0; d < dims; ++d) {
    const auto* p = &bytes[4 + 4 * d];
    const std::size_t e = (std::size_t{p[0]} << 24) | (std::size_t{p[1]} << 16) | (std::size_t{p[2]} << 8) | p[3];
    if (e == 0) throw IdxError(K::bad_magic, "idx: zero extent on axis " + std::to_string(d));
    out.shape.push_back(e);
  }
  const std::size_t need = element_count(out.shape);
  const std::size_t start = 4 + 4 * dims;
  if (bytes.size() - start < need)
    throw IdxError(K::truncated, "idx: payload needs " + std::to_string(need) + " bytes, got " +
                                     std::to_string(bytes.size() - start));
  if (bytes.size() - start > need)
    throw IdxError(K::trailing_bytes, "idx: " + std::to_string(bytes.size() - start - need) +
                                          " bytes after payload");
  out.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(start), bytes.end());
  return out;
}

std::vector<std::uint8_t> serialize_idx(const IdxArray& array) {
  std::vector<std::uint8_t> out{0, 0, 0x08, static_cast<std::uint8_t>(array.shape.size())};
  for (std::size_t e : array.shape)
    for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>((e >> s) & 0xff));
  out.insert(out.end(), array.payload.begin(), array.payload.end());
  return out;
}

IdxArray idx_from_tensor(const Tensor& tensor) {
  IdxArray a{tensor.shape(), {}};
  a.payload.reserve(tensor.size());
  for (double v : tensor.data())
    a.payload.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  return a;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Dataset load_idx_dataset(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto img = parse_idx(read_file_bytes(images));
  const auto lab = parse_idx(read_file_bytes(labels));
  if (img.shape.size() != 3) throw std::invalid_argument("idx images must be [N,H,W], got " + to_string(img.shape));
  if (lab.shape.size() != 1) throw std::invalid_argument("idx labels must be [N], got " + to_string(lab.shape));
  const std::size_t n = img.shape[0], h = img.shape[1], w = img.shape[2];
  Dataset ds;
  ds.labels = lab.as_labels();
  if (ds.labels.size() != n)
    throw std::invalid_argument("idx: " + std::to_string(n) + " images but " + std::to_string(ds.labels.size()) + " labels");
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> px(h * w);
    for (std::size_t j = 0; j < h * w; ++j) px[j] = img.payload[i * h * w + j] / 255.0;
    ds.images.emplace_back(Shape{1, h, w}, std::move(px));
  }
  ds.class_count = ds.labels.empty() ? 0 : *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
  ds.validate();
  return ds;
}

}  // namespace stochdet
