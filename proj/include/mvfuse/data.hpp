#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mvfuse/vision.hpp"

namespace mvfuse {

inline constexpr std::array<std::string_view, 6> kCameras = {
    "CAM_FRONT", "CAM_FRONT_LEFT", "CAM_FRONT_RIGHT", "CAM_BACK", "CAM_BACK_LEFT", "CAM_BACK_RIGHT"};

bool is_camera(std::string_view name);

inline constexpr std::array<std::string_view, 4> kCategories = {"perception", "prediction",
                                                                "planning", "behavior"};

/// One multi-view question/answer record. View paths are absolute once loaded.
struct QASample {
  std::string scene_id;
  std::string frame_id;
  std::map<std::string, std::filesystem::path> views;
  std::string question;
  std::string answer;
  std::string category;
  std::size_t qa_index = 0;

  // Unique within a manifest: scene/frame/qa_index.
  std::string id() const;
  // Images in canonical camera order.
  std::vector<Image> load_views() const;
};

struct LoadResult {
  std::vector<QASample> samples;
  std::size_t skipped = 0;
  std::vector<std::string> errors;
};

/// Reads a dataset manifest. Strict mode throws DataError at the first bad
/// record; lenient mode skips it and records the message.
LoadResult load_dataset(const std::filesystem::path& manifest, bool strict = true);

/// <id, CAM, x, y> object reference.
struct CTag {
  std::string object_id;
  std::string camera;
  double x = 0.0;
  double y = 0.0;

  // Canonical form: coordinates with one decimal place, no spaces.
  std::string str() const;
  friend bool operator==(const CTag&, const CTag&) = default;
};

std::vector<CTag> parse_ctags(std::string_view text);

struct SceneSplit {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
  std::uint64_t seed = 0;

  // Which bucket a scene belongs to: "train", "val", "test", or "" if absent.
  std::string bucket_of(const std::string& scene) const;
};

SceneSplit split_scenes(const std::vector<QASample>& samples,
                        std::array<double, 3> fractions = {0.90, 0.05, 0.05},
                        std::uint64_t seed = 0);

// Samples whose scene lies in the named bucket ("train"/"val"/"test"/"all").
std::vector<QASample> select_split(const std::vector<QASample>& samples, const SceneSplit& split,
                                   const std::string& bucket);

struct SyntheticObject {
  std::string camera;
  std::string color;
  std::size_t x0 = 0, y0 = 0, w = 0, h = 0;
  double cx() const { return static_cast<double>(x0) + static_cast<double>(w) / 2.0; }
  double cy() const { return static_cast<double>(y0) + static_cast<double>(h) / 2.0; }
};

struct SyntheticSummary {
  std::size_t scenes = 0;
  std::size_t frames = 0;
  std::size_t samples = 0;
  std::filesystem::path manifest;
};

inline constexpr std::size_t kSyntheticImageSize = 64;
inline constexpr std::size_t kSyntheticQuestionsPerFrame = 4;

/// Writes manifest.json plus one PPM per camera per frame under `out_dir`.
/// Same arguments produce byte-identical output.
SyntheticSummary gen_synthetic(std::size_t n_scenes, std::size_t frames_per_scene,
                               std::uint64_t seed, const std::filesystem::path& out_dir);

// The objects placed in one synthetic frame (reproduces the generator's draw).
std::vector<SyntheticObject> synthetic_frame_objects(std::uint64_t seed, std::size_t scene,
                                                     std::size_t frame);

// RGB triple of a synthetic palette color name.
std::array<double, 3> palette_rgb(std::string_view color);

}  // namespace mvfuse
