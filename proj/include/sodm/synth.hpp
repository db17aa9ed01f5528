#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sodm/boxes.hpp"
#include "sodm/rng.hpp"
#include "sodm/tensor.hpp"

namespace sodm {

// Deterministic synthetic scenes: many small, clustered shapes over a noisy
// background. All randomness is integer-drawn from SplitMix64 so scenes are
// byte-identical across platforms.
struct SceneSpec {
  int height = 64, width = 64;
  int num_objects = 6;
  int size_min = 6, size_max = 14;
  int num_clusters = 2;
  int cluster_spread = 8;  // half-width of the triangular placement jitter
  int num_classes = 3;
  uint64_t seed = 0;

  void validate() const {
    if (height <= 0 || width <= 0) throw ConfigError("scene: non-positive canvas");
    if (num_objects < 0) throw ConfigError("scene: negative object count");
    if (size_min < 2 || size_max < size_min) throw ConfigError("scene: bad size range");
    if (size_max > std::min(height, width) / 4)
      throw ConfigError("scene: size_max " + std::to_string(size_max) + " exceeds min(H,W)/4");
    if (num_clusters <= 0 || cluster_spread < 0) throw ConfigError("scene: bad cluster layout");
    if (num_classes <= 0 || num_classes > 8) throw ConfigError("scene: classes must be in [1,8]");
  }
};

namespace synth_detail {

// eight visually distinct base colors, one per class id
inline const uint8_t kPalette[8][3] = {{220, 60, 60},  {60, 200, 60},  {70, 90, 230},
                                       {230, 200, 50}, {200, 70, 210}, {60, 210, 210},
                                       {240, 140, 40}, {150, 150, 150}};

inline uint8_t clamp_byte(int v) { return static_cast<uint8_t>(std::clamp(v, 0, 255)); }

}  // namespace synth_detail

struct Scene {
  int height = 0, width = 0;
  std::vector<uint8_t> rgb;  // interleaved, row-major, 3 bytes per pixel
  std::vector<GroundTruthBox> gts;

  Tensor4d image_tensor() const {
    Tensor4d img(1, 3, height, width);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
          img.at(0, c, y, x) = rgb[(static_cast<size_t>(y) * width + x) * 3 + c] / 255.0;
    return img;
  }
};

inline Scene generate_scene(const SceneSpec& spec) {
  spec.validate();
  SplitMix64 rng(spec.seed);
  Scene scene;
  scene.height = spec.height;
  scene.width = spec.width;
  scene.rgb.resize(static_cast<size_t>(spec.height) * spec.width * 3);
  // textured background: correlated gray with small per-channel ripple
  for (int y = 0; y < spec.height; ++y)
    for (int x = 0; x < spec.width; ++x) {
      int gray = 70 + static_cast<int>(rng.next_below(41));
      for (int c = 0; c < 3; ++c) {
        int v = gray + static_cast<int>(rng.next_below(21)) - 10;
        scene.rgb[(static_cast<size_t>(y) * spec.width + x) * 3 + c] =
            synth_detail::clamp_byte(v);
      }
    }
  // cluster centers with a margin so most placements fit
  std::vector<std::pair<int, int>> clusters;
  int mx = std::min(spec.size_max, spec.width / 2 - 1);
  int my = std::min(spec.size_max, spec.height / 2 - 1);
  for (int i = 0; i < spec.num_clusters; ++i)
    clusters.emplace_back(my + static_cast<int>(rng.next_below(spec.height - 2 * my)),
                          mx + static_cast<int>(rng.next_below(spec.width - 2 * mx)));

  auto jitter = [&](int s) {
    if (s == 0) return 0;
    return (static_cast<int>(rng.next_below(2 * s + 1)) + static_cast<int>(rng.next_below(2 * s + 1))) / 2 - s;
  };

  for (int obj = 0; obj < spec.num_objects; ++obj) {
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      int cls = static_cast<int>(rng.next_below(spec.num_classes));
      int w = spec.size_min + static_cast<int>(rng.next_below(spec.size_max - spec.size_min + 1));
      int h = spec.size_min + static_cast<int>(rng.next_below(spec.size_max - spec.size_min + 1));
      auto [cy, cx] = clusters[rng.next_below(clusters.size())];
      int x0 = cx + jitter(spec.cluster_spread) - w / 2;
      int y0 = cy + jitter(spec.cluster_spread) - h / 2;
      bool ellipse = rng.next_below(2) == 1;
      if (x0 < 0 || y0 < 0 || x0 + w > spec.width || y0 + h > spec.height) continue;
      int min_x = spec.width, max_x = -1, min_y = spec.height, max_y = -1;
      for (int y = y0; y < y0 + h; ++y)
        for (int x = x0; x < x0 + w; ++x) {
          if (ellipse) {
            // integer inside-ellipse test at pixel centers (exact arithmetic)
            long dy = 2L * (y - y0) + 1 - h, dx = 2L * (x - x0) + 1 - w;
            if (dy * dy * w * (long)w + dx * dx * h * (long)h > (long)w * w * h * h) continue;
          }
          for (int c = 0; c < 3; ++c) {
            int v = synth_detail::kPalette[cls][c] + static_cast<int>(rng.next_below(21)) - 10;
            scene.rgb[(static_cast<size_t>(y) * spec.width + x) * 3 + c] =
                synth_detail::clamp_byte(v);
          }
          min_x = std::min(min_x, x);
          max_x = std::max(max_x, x);
          min_y = std::min(min_y, y);
          max_y = std::max(max_y, y);
        }
      if (max_x < 0) continue;  // nothing painted, retry
      GroundTruthBox gt;
      gt.image_id = 0;
      gt.class_id = cls;
      gt.box = Box{static_cast<double>(min_x), static_cast<double>(min_y),
                   static_cast<double>(max_x - min_x + 1), static_cast<double>(max_y - min_y + 1)};
      scene.gts.push_back(gt);
      placed = true;
    }
    if (!placed)
      throw GenerationError("could not place object " + std::to_string(obj) +
                            " within 1000 attempts");
  }
  return scene;
}

// ---- PPM (P6, 8-bit) ----

inline void write_ppm(const std::filesystem::path& path, const std::vector<uint8_t>& rgb, int h,
                      int w) {
  if (static_cast<size_t>(h) * w * 3 != rgb.size())
    throw ShapeError("write_ppm: buffer size does not match " + std::to_string(w) + "x" +
                     std::to_string(h));
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << "P6\n" << w << " " << h << "\n255\n";
  f.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  if (!f) throw IoError("short write to " + path.string());
}

inline std::vector<uint8_t> read_ppm(const std::filesystem::path& path, int& h, int& w) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  auto fail = [&](const std::string& what) {
    std::ostringstream os;
    os << path.string() << ": " << what << " at byte offset " << f.tellg();
    throw ParseError(os.str());
  };
  std::string magic;
  f >> magic;
  if (magic != "P6") fail("expected P6 magic, got '" + magic + "'");
  int maxval = 0;
  f >> w >> h >> maxval;
  if (!f || w <= 0 || h <= 0) fail("bad dimensions");
  if (maxval != 255) fail("expected maxval 255, got " + std::to_string(maxval));
  f.get();  // the single whitespace byte after maxval
  std::vector<uint8_t> rgb(static_cast<size_t>(h) * w * 3);
  f.read(reinterpret_cast<char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  if (f.gcount() != static_cast<std::streamsize>(rgb.size())) fail("truncated pixel data");
  return rgb;
}

// ---- dataset directory: images/NNNNNN.ppm + annotations.jsonl + spec.json ----

struct DatasetItem {
  Tensor4d image;  // 1x3xHxW, values in [0,1]
  std::vector<GroundTruthBox> gts;  // image_id = dataset index
};

inline std::string image_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "images/%06d.ppm", index);
  return buf;
}

inline void write_dataset(const std::vector<SceneSpec>& specs, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  std::ofstream ann(dir / "annotations.jsonl", std::ios::binary);
  if (!ann) throw IoError("cannot open " + (dir / "annotations.jsonl").string());
  nlohmann::ordered_json spec_dump = nlohmann::ordered_json::array();
  for (size_t i = 0; i < specs.size(); ++i) {
    Scene scene = generate_scene(specs[i]);
    write_ppm(dir / image_name(static_cast<int>(i)), scene.rgb, scene.height, scene.width);
    nlohmann::ordered_json line;
    line["image"] = image_name(static_cast<int>(i));
    auto boxes = nlohmann::ordered_json::array();
    for (const auto& g : scene.gts)
      boxes.push_back({g.box.x, g.box.y, g.box.w, g.box.h, g.class_id});
    line["boxes"] = boxes;
    ann << line.dump() << "\n";
    const SceneSpec& s = specs[i];
    spec_dump.push_back({{"height", s.height},
                         {"width", s.width},
                         {"num_objects", s.num_objects},
                         {"size_min", s.size_min},
                         {"size_max", s.size_max},
                         {"num_clusters", s.num_clusters},
                         {"cluster_spread", s.cluster_spread},
                         {"num_classes", s.num_classes},
                         {"seed", s.seed}});
  }
  std::ofstream sp(dir / "spec.json", std::ios::binary);
  sp << spec_dump.dump(2) << "\n";
  if (!ann || !sp) throw IoError("short write under " + dir.string());
}

inline std::vector<DatasetItem> load_dataset(const std::filesystem::path& dir) {
  std::vector<DatasetItem> items;
  std::filesystem::path ann_path = dir / "annotations.jsonl";
  std::ifstream ann(ann_path, std::ios::binary);
  if (!ann) {
    if (std::filesystem::exists(dir)) return items;  // empty dataset directory
    throw IoError("cannot open " + ann_path.string());
  }
  std::string line;
  int index = 0;
  long offset = 0;
  while (std::getline(ann, line)) {
    if (line.empty()) {
      offset += 1;
      continue;
    }
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(ann_path.string() + ": " + e.what() + " at byte offset " +
                       std::to_string(offset));
    }
    if (!j.contains("image") || !j.contains("boxes"))
      throw ParseError(ann_path.string() + ": missing image/boxes keys at byte offset " +
                       std::to_string(offset));
    DatasetItem item;
    int h = 0, w = 0;
    auto rgb = read_ppm(dir / j["image"].get<std::string>(), h, w);
    Scene scene;
    scene.height = h;
    scene.width = w;
    scene.rgb = std::move(rgb);
    item.image = scene.image_tensor();
    for (const auto& b : j["boxes"]) {
      if (!b.is_array() || b.size() != 5)
        throw ParseError(ann_path.string() + ": box is not [x,y,w,h,class] at byte offset " +
                         std::to_string(offset));
      GroundTruthBox gt;
      gt.image_id = index;
      gt.box = Box{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
      gt.class_id = b[4].get<int>();
      item.gts.push_back(gt);
    }
    items.push_back(std::move(item));
    offset += static_cast<long>(line.size()) + 1;
    ++index;
  }
  return items;
}

}  // namespace sodm
