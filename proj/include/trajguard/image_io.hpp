#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "trajguard/tensor.hpp"

namespace trajguard {

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Bytes = std::vector<std::uint8_t>;

// [-1, 1] <-> [0, 255] with rounding and saturation.
std::uint8_t to_byte(double v);
double from_byte(std::uint8_t b);

// Round trip through 8-bit storage without any codec.
Tensor quantize_8bit(const Tensor& x);

using TextChunks = std::vector<std::pair<std::string, std::string>>;

// 8-bit PNG, gray (1 channel) or RGB (3 channels). Alpha is dropped on read.
// `text` is stored as uncompressed tEXt chunks.
Bytes encode_png(const Tensor& x, const TextChunks& text = {});
Tensor decode_png(const Bytes& data);
Tensor read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Tensor& x, const TextChunks& text = {});
TextChunks read_png_text(const Bytes& data);

// Baseline JPEG encode/decode at the given quality (1..100), islow DCT, no chroma subsampling.
Bytes encode_jpeg(const Tensor& x, int quality);
Tensor decode_jpeg(const Bytes& data);
Tensor jpeg_round_trip(const Tensor& x, int quality);

// e.g. "libpng 1.6.37; libjpeg-turbo 2.1.2 (jpeg 80)"
std::string codec_versions();

Bytes read_file(const std::filesystem::path& path);
// Writes to a sibling temporary and renames over the target.
void write_file_atomic(const std::filesystem::path& path, const Bytes& data);
void write_file_atomic(const std::filesystem::path& path, const std::string& data);

}  // namespace trajguard
