#pragma once

#include <cstdint>
#include <filesystem>

#include "mvfuse/autodiff.hpp"
#include "mvfuse/tensor.hpp"

namespace mvfuse {

/// RGB image, channel-major (3 x H x W), values in [0, 1].
class Image {
 public:
  Image(std::size_t height, std::size_t width, double fill = 0.0);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  double& at(std::size_t c, std::size_t y, std::size_t x) { return px_[(c * height_ + y) * width_ + x]; }
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return px_[(c * height_ + y) * width_ + x];
  }
  const std::vector<double>& pixels() const { return px_; }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t height_;
  std::size_t width_;
  std::vector<double> px_;
};

// Binary PPM (P6, maxval 255). Pixels are quantized to 8 bits on write.
Image read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Image& img);

/// Slices an image into P x P patches, left-to-right then top-to-bottom. Row r
/// of the result is patch r flattened channel-major (c, y, x).
Tensor patchify(const Image& img, std::size_t patch);

/// Linear patch projection plus learned positional embedding (no class token).
struct PatchEmbedder {
  std::size_t patch = 16;
  std::size_t image_size = 64;
  std::size_t hidden = 64;
  Parameter projection;  // (3 P^2) x hidden
  Parameter bias;        // hidden
  Parameter position;    // S_I x hidden
  bool frozen = true;

  PatchEmbedder() = default;
  PatchEmbedder(std::size_t image_size, std::size_t patch, std::size_t hidden, SeededRng& rng);

  std::size_t seq_len() const { return (image_size / patch) * (image_size / patch); }
  void set_frozen(bool f);
};

// Rows of the result are patchify(img) * projection + bias + position.
Tensor embed_view(const Image& img, const PatchEmbedder& pe);
// Tape version, used when the embedder itself is part of a gradient graph.
Var embed_view(Tape& tape, const Image& img, PatchEmbedder& pe);

}  // namespace mvfuse
