#include "mvfuse/vision.hpp"

#include <algorithm>
#include <cctype>

#include <cmath>
#include <fstream>
#include <string>

#include "mvfuse/error.hpp"

namespace mvfuse {

Image::Image(std::size_t height, std::size_t width, double fill)
    : height_(height), width_(width), px_(3 * height * width, fill) {
  if (height == 0 || width == 0) throw ConfigError("image dimensions must be positive");
}

namespace {

std::string next_token(std::istream& in) {
  std::string tok;
  char c;
  while (in.get(c)) {
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(c);
  }
  return tok;
}

}  // namespace

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image " + path.string());
  if (next_token(in) != "P6") throw DataError(path.string() + ": not a binary PPM (P6)");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(next_token(in));
    h = std::stoul(next_token(in));
    maxval = std::stoul(next_token(in));
  } catch (const std::exception&) {
    throw DataError(path.string() + ": malformed PPM header");
  }
  if (w == 0 || h == 0 || maxval == 0 || maxval > 255) {
    throw DataError(path.string() + ": unsupported PPM header");
  }
  std::vector<unsigned char> raw(3 * w * h);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) {
    throw DataError(path.string() + ": truncated pixel data");
  }
  Image img(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        img.at(c, y, x) = static_cast<double>(raw[(y * w + x) * 3 + c]) / static_cast<double>(maxval);
  return img;
}

void write_ppm(const std::filesystem::path& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write image " + path.string());
  out << "P6\n" << img.width() << ' ' << img.height() << "\n255\n";
  std::vector<unsigned char> raw(3 * img.width() * img.height());
  for (std::size_t y = 0; y < img.height(); ++y)
    for (std::size_t x = 0; x < img.width(); ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::clamp(img.at(c, y, x), 0.0, 1.0);
        raw[(y * img.width() + x) * 3 + c] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw DataError("failed writing image " + path.string());
}

Tensor patchify(const Image& img, std::size_t patch) {
  if (patch == 0 || img.height() % patch != 0 || img.width() % patch != 0) {
    throw ConfigError("image " + std::to_string(img.height()) + "x" + std::to_string(img.width()) +
                      " is not divisible into " + std::to_string(patch) + "px patches");
  }
  const std::size_t ph = img.height() / patch, pw = img.width() / patch;
  const std::size_t len = 3 * patch * patch;
  Tensor out({ph * pw, len});
  for (std::size_t py = 0; py < ph; ++py) {
    for (std::size_t px = 0; px < pw; ++px) {
      double* row = &out[(py * pw + px) * len];
      std::size_t k = 0;
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < patch; ++y)
          for (std::size_t x = 0; x < patch; ++x)
            row[k++] = img.at(c, py * patch + y, px * patch + x);
    }
  }
  return out;
}

PatchEmbedder::PatchEmbedder(std::size_t image_size_, std::size_t patch_, std::size_t hidden_,
                             SeededRng& rng)
    : patch(patch_), image_size(image_size_), hidden(hidden_) {
  if (patch == 0 || image_size % patch != 0) {
    throw ConfigError("image size " + std::to_string(image_size) +
                      " is not a multiple of patch size " + std::to_string(patch));
  }
  projection = {"vision.patch.weight", ParamGroup::kPatch,
                rng.normal({3 * patch * patch, hidden}, 0.02), {}, false};
  bias = {"vision.patch.bias", ParamGroup::kPatch, Tensor({hidden}, 0.0), {}, false};
  position = {"vision.patch.position", ParamGroup::kPatch, rng.normal({seq_len(), hidden}, 0.02),
              {}, false};
}

void PatchEmbedder::set_frozen(bool f) {
  frozen = f;
  projection.trainable = bias.trainable = position.trainable = !f;
}

namespace {

void check_image(const Image& img, const PatchEmbedder& pe) {
  if (img.height() != pe.image_size || img.width() != pe.image_size) {
    throw ConfigError("image " + std::to_string(img.height()) + "x" + std::to_string(img.width()) +
                      " does not match embedder input " + std::to_string(pe.image_size) + "x" +
                      std::to_string(pe.image_size));
  }
}

}  // namespace

Tensor embed_view(const Image& img, const PatchEmbedder& pe) {
  // A no-grad tape only reads the parameters.
  Tape tape(false);
  return embed_view(tape, img, const_cast<PatchEmbedder&>(pe)).value();
}

Var embed_view(Tape& tape, const Image& img, PatchEmbedder& pe) {
  check_image(img, pe);
  Var patches = tape.constant(patchify(img, pe.patch));
  Var projected = add_bias(matmul(patches, tape.param(pe.projection)), tape.param(pe.bias));
  return add(projected, tape.param(pe.position));
}

}  // namespace mvfuse
