#include "mvfuse/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <regex>
#include <set>

#include <nlohmann/json.hpp>

#include "mvfuse/error.hpp"
#include "mvfuse/tensor.hpp"

namespace mvfuse {

namespace fs = std::filesystem;
using json = nlohmann::json;

bool is_camera(std::string_view name) {
  return std::find(kCameras.begin(), kCameras.end(), name) != kCameras.end();
}

std::string QASample::id() const {
  return scene_id + "/" + frame_id + "/" + std::to_string(qa_index);
}

std::vector<Image> QASample::load_views() const {
  std::vector<Image> out;
  out.reserve(kCameras.size());
  for (auto cam : kCameras) {
    auto it = views.find(std::string(cam));
    if (it == views.end()) throw DataError(id() + ": missing view " + std::string(cam));
    out.push_back(read_ppm(it->second));
  }
  return out;
}

// ------------------------------------------------------------------ loading

namespace {

std::string frame_label(const std::string& scene, const std::string& frame) {
  return "scene '" + scene + "' frame '" + frame + "'";
}

std::string string_field(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key) || !j.at(key).is_string()) return {};
  return j.at(key).get<std::string>();
}

}  // namespace

LoadResult load_dataset(const fs::path& manifest, bool strict) {
  std::ifstream in(manifest);
  if (!in) throw DataError("cannot open manifest " + manifest.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError("manifest " + manifest.string() + " is not valid JSON: " + e.what());
  }
  if (!doc.is_object() || !doc.contains("scenes") || !doc.at("scenes").is_array()) {
    throw DataError("manifest " + manifest.string() + " lacks a top-level \"scenes\" array");
  }
  const fs::path base = manifest.parent_path();
  LoadResult result;

  auto reject = [&](const std::string& msg, std::size_t count) {
    if (strict) throw DataError(msg);
    result.errors.push_back(msg);
    result.skipped += count;
  };

  for (const auto& scene : doc.at("scenes")) {
    const std::string scene_id = string_field(scene, "scene_id");
    if (scene_id.empty() || !scene.contains("frames") || !scene.at("frames").is_array()) {
      reject("malformed scene record (needs scene_id and frames)", 0);
      continue;
    }
    for (const auto& frame : scene.at("frames")) {
      const std::string frame_id = string_field(frame, "frame_id");
      const std::size_t n_qas =
          frame.is_object() && frame.contains("qas") && frame.at("qas").is_array()
              ? frame.at("qas").size()
              : 0;
      const std::string where = frame_label(scene_id, frame_id);
      if (frame_id.empty()) {
        reject("scene '" + scene_id + "': frame without frame_id", n_qas);
        continue;
      }
      if (!frame.contains("views") || !frame.at("views").is_object()) {
        reject(where + ": missing views object", n_qas);
        continue;
      }
      std::map<std::string, fs::path> views;
      std::string problem;
      for (const auto& [cam, path] : frame.at("views").items()) {
        if (!is_camera(cam)) {
          problem = where + ": unknown camera name '" + cam + "'";
          break;
        }
        if (!path.is_string() || path.get<std::string>().empty()) {
          problem = where + ": view " + cam + " has no image path";
          break;
        }
        views[cam] = base / path.get<std::string>();
      }
      if (problem.empty()) {
        for (auto cam : kCameras) {
          if (!views.count(std::string(cam))) {
            problem = where + ": missing view " + std::string(cam);
            break;
          }
        }
      }
      if (!problem.empty()) {
        reject(problem, n_qas);
        continue;
      }
      if (n_qas == 0 && !(frame.contains("qas") && frame.at("qas").is_array())) {
        reject(where + ": missing qas array", 0);
        continue;
      }
      std::size_t qa_index = 0;
      for (const auto& qa : frame.at("qas")) {
        const std::size_t idx = qa_index++;
        const std::string question = string_field(qa, "question");
        const std::string answer = string_field(qa, "answer");
        const std::string category = string_field(qa, "category");
        const std::string tag = where + " qa " + std::to_string(idx);
        if (question.empty() || answer.empty()) {
          reject(tag + ": question and answer must be non-empty strings", 1);
          continue;
        }
        if (std::find(kCategories.begin(), kCategories.end(), category) == kCategories.end()) {
          reject(tag + ": unknown category '" + category + "'", 1);
          continue;
        }
        result.samples.push_back(
            QASample{scene_id, frame_id, views, question, answer, category, idx});
      }
    }
  }
  return result;
}

// ------------------------------------------------------------------- c-tags

std::string CTag::str() const {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%.1f,%.1f", x, y);
  return "<" + object_id + "," + camera + "," + buf + ">";
}

std::vector<CTag> parse_ctags(std::string_view text) {
  static const std::regex re(
      R"(<([A-Za-z0-9_]+), *(CAM_[A-Z_]+), *([0-9]+(?:\.[0-9]*)?|\.[0-9]+), *([0-9]+(?:\.[0-9]*)?|\.[0-9]+)>)");
  std::vector<CTag> out;
  const std::string s(text);
  for (auto it = std::sregex_iterator(s.begin(), s.end(), re); it != std::sregex_iterator(); ++it) {
    const auto& m = *it;
    if (!is_camera(m[2].str())) continue;
    out.push_back(CTag{m[1].str(), m[2].str(), std::stod(m[3].str()), std::stod(m[4].str())});
  }
  return out;
}

// -------------------------------------------------------------------- split

std::string SceneSplit::bucket_of(const std::string& scene) const {
  auto has = [&](const std::vector<std::string>& v) {
    return std::find(v.begin(), v.end(), scene) != v.end();
  };
  if (has(train)) return "train";
  if (has(val)) return "val";
  if (has(test)) return "test";
  return {};
}

SceneSplit split_scenes(const std::vector<QASample>& samples, std::array<double, 3> fractions,
                        std::uint64_t seed) {
  double total = 0.0;
  for (double f : fractions) {
    if (f < 0) throw ConfigError("split fractions must be non-negative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");

  std::set<std::string> unique;
  for (const auto& s : samples) unique.insert(s.scene_id);
  std::vector<std::string> scenes(unique.begin(), unique.end());
  const std::size_t n = scenes.size();
  const auto nonzero = static_cast<std::size_t>(
      std::count_if(fractions.begin(), fractions.end(), [](double f) { return f > 0; }));
  if (n < nonzero) {
    throw ConfigError("cannot split " + std::to_string(n) + " scenes into " +
                      std::to_string(nonzero) + " non-empty buckets");
  }

  SeededRng rng(seed);
  rng.shuffle(scenes);

  // Largest-remainder apportionment; ties go to the earlier bucket.
  std::array<std::size_t, 3> count{};
  std::array<double, 3> rem{};
  std::size_t assigned = 0;
  for (std::size_t b = 0; b < 3; ++b) {
    const double exact = fractions[b] * static_cast<double>(n);
    count[b] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    rem[b] = exact - static_cast<double>(count[b]);
    assigned += count[b];
  }
  while (assigned < n) {
    std::size_t best = 0;
    for (std::size_t b = 1; b < 3; ++b)
      if (rem[b] > rem[best] + 1e-12) best = b;
    ++count[best];
    rem[best] = -1.0;
    ++assigned;
  }
  // A bucket with a non-zero fraction always receives at least one scene.
  for (std::size_t b = 0; b < 3; ++b) {
    if (fractions[b] > 0 && count[b] == 0) {
      const auto donor = static_cast<std::size_t>(
          std::max_element(count.begin(), count.end()) - count.begin());
      --count[donor];
      ++count[b];
    }
  }

  SceneSplit split;
  split.seed = seed;
  auto it = scenes.begin();
  split.train.assign(it, it + static_cast<std::ptrdiff_t>(count[0]));
  it += static_cast<std::ptrdiff_t>(count[0]);
  split.val.assign(it, it + static_cast<std::ptrdiff_t>(count[1]));
  it += static_cast<std::ptrdiff_t>(count[1]);
  split.test.assign(it, scenes.end());
  return split;
}

std::vector<QASample> select_split(const std::vector<QASample>& samples, const SceneSplit& split,
                                   const std::string& bucket) {
  if (bucket != "train" && bucket != "val" && bucket != "test" && bucket != "all") {
    throw ConfigError("unknown split '" + bucket + "' (expected train, val, test or all)");
  }
  std::vector<QASample> out;
  for (const auto& s : samples)
    if (bucket == "all" || split.bucket_of(s.scene_id) == bucket) out.push_back(s);
  return out;
}

// ---------------------------------------------------------------- synthetic

namespace {

constexpr std::array<std::string_view, 4> kColors = {"red", "green", "blue", "yellow"};

std::uint64_t mix(std::uint64_t x) {
  // splitmix64 finalizer
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::string scene_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%03zu", i);
  return buf;
}

std::string frame_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%02zu", i);
  return buf;
}

}  // namespace

std::array<double, 3> palette_rgb(std::string_view color) {
  if (color == "red") return {1.0, 0.0, 0.0};
  if (color == "green") return {0.0, 1.0, 0.0};
  if (color == "blue") return {0.0, 0.0, 1.0};
  if (color == "yellow") return {1.0, 1.0, 0.0};
  throw ConfigError("unknown palette color '" + std::string(color) + "'");
}

std::vector<SyntheticObject> synthetic_frame_objects(std::uint64_t seed, std::size_t scene,
                                                     std::size_t frame) {
  SeededRng rng(mix(mix(seed) ^ mix(scene * 1000003ULL + frame)));
  const std::size_t n = 1 + rng.below(3);
  std::vector<std::size_t> cams(kCameras.size());
  std::iota(cams.begin(), cams.end(), 0);
  rng.shuffle(cams);
  cams.resize(n);
  std::sort(cams.begin(), cams.end());
  std::vector<SyntheticObject> objs;
  for (std::size_t c : cams) {
    SyntheticObject o;
    o.camera = std::string(kCameras[c]);
    o.color = std::string(kColors[rng.below(kColors.size())]);
    o.w = 16 + 8 * rng.below(2);
    o.h = 16 + 8 * rng.below(2);
    o.x0 = 8 * rng.below((kSyntheticImageSize - o.w) / 8 + 1);
    o.y0 = 8 * rng.below((kSyntheticImageSize - o.h) / 8 + 1);
    objs.push_back(o);
  }
  return objs;
}

SyntheticSummary gen_synthetic(std::size_t n_scenes, std::size_t frames_per_scene,
                               std::uint64_t seed, const fs::path& out_dir) {
  if (n_scenes == 0) throw ConfigError("synthetic dataset needs at least one scene");
  if (frames_per_scene == 0) throw ConfigError("synthetic dataset needs at least one frame per scene");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw DataError("cannot create output directory " + out_dir.string() + ": " + ec.message());

  SyntheticSummary summary;
  json scenes = json::array();
  for (std::size_t s = 0; s < n_scenes; ++s) {
    const std::string sid = scene_name(s);
    fs::create_directories(out_dir / sid, ec);
    if (ec) throw DataError("cannot create " + (out_dir / sid).string() + ": " + ec.message());
    json frames = json::array();
    for (std::size_t f = 0; f < frames_per_scene; ++f) {
      const std::string fid = frame_name(f);
      const auto objs = synthetic_frame_objects(seed, s, f);
      json views = json::object();
      for (auto cam : kCameras) {
        Image img(kSyntheticImageSize, kSyntheticImageSize, 0.0);
        for (const auto& o : objs) {
          if (o.camera != cam) continue;
          const auto rgb = palette_rgb(o.color);
          for (std::size_t y = o.y0; y < o.y0 + o.h; ++y)
            for (std::size_t x = o.x0; x < o.x0 + o.w; ++x)
              for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = rgb[c];
        }
        const std::string rel = sid + "/" + fid + "_" + std::string(cam) + ".ppm";
        write_ppm(out_dir / rel, img);
        views[std::string(cam)] = rel;
      }

      // Question targets come from a stream separate from object placement.
      SeededRng qrng(mix(mix(seed ^ 0x51ULL) ^ mix(s * 1000003ULL + f)));
      const auto& color_obj = objs[qrng.below(objs.size())];
      const std::size_t where_idx = qrng.below(objs.size());
      const auto& where_obj = objs[where_idx];
      const bool front_blocked = std::any_of(objs.begin(), objs.end(),
                                             [](const auto& o) { return o.camera == "CAM_FRONT"; });
      std::string cams;
      for (const auto& o : objs) cams += (cams.empty() ? "" : " and ") + o.camera;
      const CTag tag{"c" + std::to_string(where_idx + 1), where_obj.camera, where_obj.cx(),
                     where_obj.cy()};

      json qas = json::array();
      qas.push_back({{"question", "What color is the object in " + color_obj.camera + "?"},
                     {"answer", color_obj.color},
                     {"category", "perception"}});
      qas.push_back({{"question", "Where is the object in " + where_obj.camera + "?"},
                     {"answer", tag.str()},
                     {"category", "prediction"}});
      qas.push_back({{"question", "What should the ego vehicle do?"},
                     {"answer", front_blocked ? "slow down" : "keep going"},
                     {"category", "planning"}});
      qas.push_back({{"question", "Which cameras show an object?"},
                     {"answer", cams},
                     {"category", "behavior"}});
      summary.samples += qas.size();
      frames.push_back({{"frame_id", fid}, {"views", views}, {"qas", qas}});
      ++summary.frames;
    }
    scenes.push_back({{"scene_id", sid}, {"frames", frames}});
    ++summary.scenes;
  }
  summary.manifest = out_dir / "manifest.json";
  std::ofstream out(summary.manifest);
  if (!out) throw DataError("cannot write " + summary.manifest.string());
  out << json{{"scenes", scenes}}.dump(2) << '\n';
  return summary;
}

}  // namespace mvfuse
