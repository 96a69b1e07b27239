#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "stochdet/tensor.hpp"

namespace stochdet {

struct Dataset {
  std::vector<Tensor> images;  // each [1,H,W], values in [0,1]
  std::vector<std::size_t> labels;
  std::size_t class_count = 0;

  std::size_t size() const { return images.size(); }
  /// Throws std::invalid_argument if lengths differ or a label is out of range.
  void validate() const;
};

enum class SynthPattern { filled_square = 0, hollow_square = 1, cross = 2, diagonal_stripe = 3 };

inline constexpr std::size_t kSynthClasses = 4;
inline constexpr std::size_t kFixtureImageSize = 18;

/// Sample `index` of the synthetic corpus for `seed`. Each sample depends only
/// on (seed, index), so index ranges partition the corpus into disjoint splits.
std::pair<Tensor, std::size_t> synth_sample(std::uint64_t seed, std::uint64_t index,
                                            std::size_t image_size);

/// Samples [first_index, first_index + count).
Dataset synth_dataset(std::uint64_t seed, std::int64_t count,
                      std::size_t image_size = kFixtureImageSize, std::uint64_t first_index = 0);

// IDX binary format: 00 00 <type> <ndims>, then ndims big-endian u32 extents,
// then the payload. Only unsigned bytes (type 0x08) are supported.

class IdxError : public std::runtime_error {
 public:
  enum class Kind { bad_magic, truncated, unsupported_type, trailing_bytes };
  IdxError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct IdxArray {
  Shape shape;
  std::vector<std::uint8_t> payload;

  /// Payload scaled by 1/255.
  Tensor as_tensor() const;
  std::vector<std::size_t> as_labels() const;
};

IdxArray parse_idx(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> serialize_idx(const IdxArray& array);
/// Inverse of as_tensor: values rounded to the nearest 1/255 step.
IdxArray idx_from_tensor(const Tensor& tensor);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

/// images file [N,H,W] and labels file [N]. class_count is max label + 1.
Dataset load_idx_dataset(const std::filesystem::path& images, const std::filesystem::path& labels);

}  // namespace stochdet
