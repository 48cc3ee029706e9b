#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "seqvis/codecs.hpp"
#include "seqvis/geometry.hpp"
#include "seqvis/image.hpp"
#include "seqvis/rng.hpp"

namespace seqvis {

// --------------------------------------------------------------------------
// Scenes
// --------------------------------------------------------------------------

enum class ShapeType { Rectangle = 0, Triangle = 1, Ellipse = 2 };

inline std::string_view shape_name(ShapeType t) {
  switch (t) {
    case ShapeType::Rectangle: return "rectangle";
    case ShapeType::Triangle: return "triangle";
    case ShapeType::Ellipse: return "ellipse";
  }
  throw std::logic_error("shape_name: bad shape");
}

struct PaletteColor {
  std::string_view name;
  float r, g, b;
};

inline constexpr std::array<PaletteColor, 5> kPalette = {{
    {"red", 0.85f, 0.20f, 0.20f},
    {"green", 0.20f, 0.75f, 0.30f},
    {"blue", 0.25f, 0.40f, 0.90f},
    {"yellow", 0.90f, 0.85f, 0.20f},
    {"white", 0.95f, 0.95f, 0.95f},
}};

/// Procedural description of one rendered shape; enough to redraw the scene
/// pixels from annotations alone.
struct ShapeDescriptor {
  ShapeType type = ShapeType::Rectangle;
  int color = 0;  // palette index
  Polygon polygon;
};

/// Per-image ground truth: geometry, captions, and either stored pixels or a
/// procedural descriptor to render them from.
struct SceneAnnotation {
  std::size_t height = 0;
  std::size_t width = 0;
  ImageTensor image;                    // may be empty (annotation-only)
  std::vector<ShapeDescriptor> shapes;  // empty for real datasets
  std::vector<InstanceAnnotation> instances;
  std::vector<std::string> captions;
};

/// Draw the procedural shapes onto a fresh canvas.
inline ImageTensor render_scene(const SceneAnnotation& scene, std::size_t h,
                                std::size_t w) {
  ImageTensor img(h, w, 3, 0.08f);
  for (const ShapeDescriptor& shape : scene.shapes) {
    BinaryMask mask = rasterize(std::vector<Polygon>{shape.polygon}, h, w);
    const PaletteColor& col = kPalette[shape.color % kPalette.size()];
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < w; ++c) {
        if (!mask.at(r, c)) continue;
        img.at(r, c, 0) = col.r;
        img.at(r, c, 1) = col.g;
        img.at(r, c, 2) = col.b;
      }
    }
  }
  return img;
}

/// Model-input view of a scene: stored pixels if present, else a render.
inline ImageTensor scene_pixels(const SceneAnnotation& scene, std::size_t size) {
  if (!scene.image.empty()) {
    if (scene.image.height == size && scene.image.width == size)
      return scene.image;
    return resize_nearest(scene.image, size, size);
  }
  if (!scene.shapes.empty()) return render_scene(scene, size, size);
  return ImageTensor(size, size, 3, 0.0f);
}

// --------------------------------------------------------------------------
// Synthetic dataset
// --------------------------------------------------------------------------

struct SyntheticConfig {
  std::size_t image_size = 64;
  int min_shapes = 1;
  int max_shapes = 3;
  double min_shape_size = 0.25;
  double max_shape_size = 0.6;
  bool with_captions = true;
  std::uint64_t seed = 0;
};

namespace detail {

inline Polygon make_shape_polygon(ShapeType type, double cy, double cx, double hh,
                                  double hw) {
  Polygon poly;
  switch (type) {
    case ShapeType::Rectangle:
      poly.vertices = {Point{cy - hh, cx - hw}, Point{cy - hh, cx + hw},
                       Point{cy + hh, cx + hw}, Point{cy + hh, cx - hw}};
      break;
    case ShapeType::Triangle:
      poly.vertices = {Point{cy - hh, cx}, Point{cy + hh, cx + hw},
                       Point{cy + hh, cx - hw}};
      break;
    case ShapeType::Ellipse: {
      constexpr int kSides = 24;  // multiple of 4 so vertices hit the extremes
      for (int i = 0; i < kSides; ++i) {
        double a = 2.0 * 3.141592653589793 * i / kSides;
        poly.vertices.push_back(Point{cy + hh * std::sin(a), cx + hw * std::cos(a)});
      }
      break;
    }
  }
  return poly;
}

inline BBox tight_bbox(const Polygon& poly) {
  BBox b{1.0, 1.0, 0.0, 0.0};
  for (const Point& p : poly.vertices) {
    b.ymin = std::min(b.ymin, p.y);
    b.xmin = std::min(b.xmin, p.x);
    b.ymax = std::max(b.ymax, p.y);
    b.xmax = std::max(b.xmax, p.x);
  }
  return b;
}

inline std::string relation_caption(const SceneAnnotation& scene, Rng& rng) {
  auto describe = [&](std::size_t i) {
    const ShapeDescriptor& s = scene.shapes[i];
    std::string out = "a ";
    out += kPalette[s.color % kPalette.size()].name;
    out += " ";
    out += shape_name(s.type);
    return out;
  };
  if (scene.shapes.size() == 1) return describe(0);
  std::size_t i = static_cast<std::size_t>(rng.uniform_index(scene.shapes.size()));
  std::size_t j = static_cast<std::size_t>(rng.uniform_index(scene.shapes.size() - 1));
  if (j >= i) ++j;
  BBox bi = tight_bbox(scene.shapes[i].polygon);
  BBox bj = tight_bbox(scene.shapes[j].polygon);
  double dy = (bi.ymin + bi.ymax) - (bj.ymin + bj.ymax);
  double dx = (bi.xmin + bi.xmax) - (bj.xmin + bj.xmax);
  std::string rel;
  if (std::abs(dx) >= std::abs(dy)) {
    rel = dx < 0 ? "left of" : "right of";
  } else {
    rel = dy < 0 ? "above" : "below";
  }
  return describe(i) + " " + rel + " " + describe(j);
}

}  // namespace detail

/// Deterministic synthetic scenes: colored rectangles, triangles, and
/// ellipses with exact boxes and polygons; triangles carry their vertices as
/// a 3-landmark keypoint set; captions come from a small template grammar.
inline std::vector<SceneAnnotation> generate_synthetic(const SyntheticConfig& cfg,
                                                       std::size_t n) {
  if (n < 1) throw std::invalid_argument("generate_synthetic: n must be >= 1");
  if (cfg.min_shapes < 1 || cfg.max_shapes < cfg.min_shapes)
    throw std::invalid_argument("generate_synthetic: bad shape count range");
  Rng rng(cfg.seed);
  std::vector<SceneAnnotation> scenes;
  scenes.reserve(n);
  for (std::size_t si = 0; si < n; ++si) {
    Rng srng = rng.fork(si);
    SceneAnnotation scene;
    scene.height = cfg.image_size;
    scene.width = cfg.image_size;
    int count = cfg.min_shapes +
                static_cast<int>(srng.uniform_index(
                    static_cast<std::uint64_t>(cfg.max_shapes - cfg.min_shapes + 1)));
    for (int k = 0; k < count; ++k) {
      ShapeType type = static_cast<ShapeType>(srng.uniform_index(3));
      int color = static_cast<int>(srng.uniform_index(kPalette.size()));
      double h = srng.uniform(cfg.min_shape_size, cfg.max_shape_size);
      double w = srng.uniform(cfg.min_shape_size, cfg.max_shape_size);
      double hh = h / 2.0, hw = w / 2.0;
      double cy = srng.uniform(hh, 1.0 - hh);
      double cx = srng.uniform(hw, 1.0 - hw);
      ShapeDescriptor shape{type, color, detail::make_shape_polygon(type, cy, cx, hh, hw)};
      InstanceAnnotation inst;
      inst.class_id = static_cast<int>(type);
      inst.polygons = {shape.polygon};
      inst.bbox = detail::tight_bbox(shape.polygon);
      if (type == ShapeType::Triangle) {
        KeypointSet kps;
        for (const Point& p : shape.polygon.vertices) {
          kps.points.push_back(Keypoint{p.y, p.x, false});
        }
        inst.keypoints = kps;
      }
      scene.shapes.push_back(std::move(shape));
      scene.instances.push_back(std::move(inst));
    }
    if (cfg.with_captions) {
      scene.captions.push_back(detail::relation_caption(scene, srng));
    }
    scene.image = render_scene(scene, cfg.image_size, cfg.image_size);
    scenes.push_back(std::move(scene));
  }
  return scenes;
}

// --------------------------------------------------------------------------
// COCO-format annotations
// --------------------------------------------------------------------------

struct CocoLoadStats {
  std::size_t rle_skipped = 0;
};

/// Reads a COCO-schema annotation file. Boxes [x, y, w, h] in pixels are
/// normalized to [ymin, xmin, ymax, xmax]; polygon points are normalized;
/// keypoint visibility 0/1 maps to occluded and 2 to visible. Annotation
/// records carrying a `caption` string attach to the image's caption list.
/// RLE segmentations are skipped and tallied. An optional `keypoint_subset`
/// selects, by index, which keypoints to keep.
inline std::vector<SceneAnnotation> load_coco(
    const std::string& path, const std::vector<int>& keypoint_subset = {},
    CocoLoadStats* stats = nullptr) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_coco: cannot open " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("load_coco: " + path + ": " + e.what());
  }

  auto fail = [&](const nlohmann::json& record, const std::string& what) {
    std::string id = record.contains("id") ? record["id"].dump() : "?";
    throw std::runtime_error("load_coco: record id=" + id + ": " + what);
  };

  std::vector<SceneAnnotation> scenes;
  std::map<std::int64_t, std::size_t> scene_of_image;
  std::vector<std::vector<ShapeDescriptor>> shapes_of;
  if (!doc.contains("images") || !doc["images"].is_array())
    throw std::runtime_error("load_coco: missing images array");
  for (const auto& im : doc["images"]) {
    if (!im.contains("id") || !im.contains("height") || !im.contains("width"))
      fail(im, "image missing id/height/width");
    SceneAnnotation scene;
    scene.height = im["height"].get<std::size_t>();
    scene.width = im["width"].get<std::size_t>();
    if (scene.height < 1 || scene.width < 1) fail(im, "degenerate image size");
    scene_of_image[im["id"].get<std::int64_t>()] = scenes.size();
    scenes.push_back(std::move(scene));
  }
  shapes_of.resize(scenes.size());

  std::map<std::int64_t, int> class_of_category;
  if (doc.contains("categories")) {
    std::vector<std::int64_t> cat_ids;
    for (const auto& cat : doc["categories"]) {
      if (!cat.contains("id")) fail(cat, "category missing id");
      cat_ids.push_back(cat["id"].get<std::int64_t>());
    }
    std::sort(cat_ids.begin(), cat_ids.end());
    for (std::size_t i = 0; i < cat_ids.size(); ++i) {
      class_of_category[cat_ids[i]] = static_cast<int>(i);
    }
  }

  auto clamp01 = [](double v) { return std::min(1.0, std::max(0.0, v)); };

  if (doc.contains("annotations")) {
    for (const auto& ann : doc["annotations"]) {
      if (!ann.contains("image_id")) fail(ann, "annotation missing image_id");
      auto it = scene_of_image.find(ann["image_id"].get<std::int64_t>());
      if (it == scene_of_image.end()) fail(ann, "annotation references unknown image");
      SceneAnnotation& scene = scenes[it->second];
      double H = static_cast<double>(scene.height);
      double W = static_cast<double>(scene.width);

      if (ann.contains("caption")) {
        scene.captions.push_back(ann["caption"].get<std::string>());
        continue;
      }
      if (!ann.contains("bbox") || !ann["bbox"].is_array() || ann["bbox"].size() != 4)
        fail(ann, "annotation missing 4-element bbox");

      InstanceAnnotation inst;
      double x = ann["bbox"][0].get<double>();
      double y = ann["bbox"][1].get<double>();
      double w = ann["bbox"][2].get<double>();
      double h = ann["bbox"][3].get<double>();
      if (w < 0 || h < 0) fail(ann, "negative bbox extent");
      inst.bbox = BBox{clamp01(y / H), clamp01(x / W), clamp01((y + h) / H),
                       clamp01((x + w) / W)};
      if (ann.contains("category_id")) {
        auto cit = class_of_category.find(ann["category_id"].get<std::int64_t>());
        if (cit == class_of_category.end()) fail(ann, "unknown category_id");
        inst.class_id = cit->second;
      }
      if (ann.contains("segmentation")) {
        const auto& seg = ann["segmentation"];
        if (seg.is_object()) {
          if (stats) ++stats->rle_skipped;  // RLE-encoded mask
        } else if (seg.is_array()) {
          for (const auto& ring : seg) {
            if (!ring.is_array() || ring.size() < 6 || ring.size() % 2 != 0)
              fail(ann, "malformed polygon ring");
            Polygon poly;
            for (std::size_t i = 0; i + 1 < ring.size(); i += 2) {
              poly.vertices.push_back(Point{clamp01(ring[i + 1].get<double>() / H),
                                            clamp01(ring[i].get<double>() / W)});
            }
            inst.polygons.push_back(std::move(poly));
          }
        }
      }
      if (ann.contains("keypoints")) {
        const auto& kp = ann["keypoints"];
        if (!kp.is_array() || kp.size() % 3 != 0)
          fail(ann, "keypoints not a flat [x, y, v] list");
        KeypointSet all;
        for (std::size_t i = 0; i + 2 < kp.size(); i += 3) {
          double kx = kp[i].get<double>();
          double ky = kp[i + 1].get<double>();
          int vis = kp[i + 2].get<int>();
          if (vis == 2) {
            all.points.push_back(Keypoint{clamp01(ky / H), clamp01(kx / W), false});
          } else {
            all.points.push_back(occluded_keypoint());
          }
        }
        if (!keypoint_subset.empty()) {
          KeypointSet sub;
          for (int idx : keypoint_subset) {
            if (idx < 0 || idx >= static_cast<int>(all.points.size()))
              fail(ann, "keypoint subset index out of range");
            sub.points.push_back(all.points[idx]);
          }
          inst.keypoints = std::move(sub);
        } else {
          inst.keypoints = std::move(all);
        }
      }
      if (ann.contains("shape_type") && ann.contains("color")) {
        // Synthetic-dataset extension: procedural render descriptor.
        if (!inst.polygons.empty()) {
          shapes_of[it->second].push_back(
              ShapeDescriptor{static_cast<ShapeType>(ann["shape_type"].get<int>()),
                              ann["color"].get<int>(), inst.polygons.front()});
        }
      }
      scene.instances.push_back(std::move(inst));
    }
  }
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    scenes[i].shapes = std::move(shapes_of[i]);
    if (!scenes[i].shapes.empty()) {
      scenes[i].image = render_scene(scenes[i], scenes[i].height, scenes[i].width);
    }
  }
  return scenes;
}

/// Writes scenes as a COCO-schema annotation file (the inverse of load_coco
/// for synthetic data; pixel data is carried by the shape descriptors).
inline void write_coco(const std::string& path,
                       std::span<const SceneAnnotation> scenes,
                       std::span<const std::string> class_names) {
  nlohmann::json doc;
  doc["images"] = nlohmann::json::array();
  doc["annotations"] = nlohmann::json::array();
  doc["categories"] = nlohmann::json::array();
  for (std::size_t i = 0; i < class_names.size(); ++i) {
    doc["categories"].push_back(
        {{"id", static_cast<int>(i) + 1}, {"name", class_names[i]}});
  }
  std::int64_t ann_id = 1;
  for (std::size_t si = 0; si < scenes.size(); ++si) {
    const SceneAnnotation& scene = scenes[si];
    std::int64_t image_id = static_cast<std::int64_t>(si) + 1;
    doc["images"].push_back({{"id", image_id},
                             {"height", scene.height},
                             {"width", scene.width}});
    double H = static_cast<double>(scene.height);
    double W = static_cast<double>(scene.width);
    for (std::size_t ii = 0; ii < scene.instances.size(); ++ii) {
      const InstanceAnnotation& inst = scene.instances[ii];
      nlohmann::json ann;
      ann["id"] = ann_id++;
      ann["image_id"] = image_id;
      ann["category_id"] = inst.class_id + 1;
      ann["bbox"] = {inst.bbox.xmin * W, inst.bbox.ymin * H,
                     inst.bbox.width() * W, inst.bbox.height() * H};
      if (!inst.polygons.empty()) {
        nlohmann::json seg = nlohmann::json::array();
        for (const Polygon& poly : inst.polygons) {
          nlohmann::json ring = nlohmann::json::array();
          for (const Point& p : poly.vertices) {
            ring.push_back(p.x * W);
            ring.push_back(p.y * H);
          }
          seg.push_back(std::move(ring));
        }
        ann["segmentation"] = std::move(seg);
      }
      if (inst.keypoints) {
        nlohmann::json kp = nlohmann::json::array();
        for (const Keypoint& k : inst.keypoints->points) {
          if (k.occluded) {
            kp.push_back(0.0);
            kp.push_back(0.0);
            kp.push_back(1);
          } else {
            kp.push_back(k.x * W);
            kp.push_back(k.y * H);
            kp.push_back(2);
          }
        }
        ann["keypoints"] = std::move(kp);
      }
      if (ii < scene.shapes.size()) {
        ann["shape_type"] = static_cast<int>(scene.shapes[ii].type);
        ann["color"] = scene.shapes[ii].color;
      }
      doc["annotations"].push_back(std::move(ann));
    }
    for (const std::string& cap : scene.captions) {
      doc["annotations"].push_back(
          {{"id", ann_id++}, {"image_id", image_id}, {"caption", cap}});
    }
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_coco: cannot open " + path);
  out << doc.dump(1) << "\n";
}

// --------------------------------------------------------------------------
// Run persistence
// --------------------------------------------------------------------------

struct RunManifest {
  std::vector<std::pair<std::string, std::uint64_t>> entries;  // file, digest
};

namespace detail {

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& p, std::string_view bytes) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + p.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("short write to " + p.string());
}

}  // namespace detail

/// Writes config.cfg, params.ckpt, metrics.jsonl, and a MANIFEST of content
/// digests. A `.incomplete` marker guards against torn writes.
inline RunManifest persist_run(const std::string& dir, std::string_view config_text,
                               std::string_view checkpoint_bytes,
                               std::span<const std::string> metric_lines) {
  namespace fs = std::filesystem;
  fs::path root(dir);
  fs::create_directories(root);
  detail::write_file(root / ".incomplete", "");

  std::string metrics;
  for (const std::string& line : metric_lines) {
    metrics += line;
    metrics += "\n";
  }
  RunManifest manifest;
  auto emit = [&](const std::string& name, std::string_view bytes) {
    detail::write_file(root / name, bytes);
    manifest.entries.emplace_back(name, detail::fnv1a64(bytes));
  };
  emit("config.cfg", config_text);
  emit("params.ckpt", checkpoint_bytes);
  emit("metrics.jsonl", metrics);

  std::ostringstream mf;
  for (const auto& [name, digest] : manifest.entries) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(digest));
    mf << buf << " " << name << "\n";
  }
  detail::write_file(root / "MANIFEST", mf.str());
  fs::remove(root / ".incomplete");
  return manifest;
}

struct LoadedRun {
  std::string config_text;
  std::string checkpoint_bytes;
  std::vector<std::string> metric_lines;
};

/// Reads a run directory back, verifying every digest in the MANIFEST.
inline LoadedRun load_run(const std::string& dir) {
  namespace fs = std::filesystem;
  fs::path root(dir);
  if (fs::exists(root / ".incomplete"))
    throw std::runtime_error("load_run: " + dir + " is marked incomplete");
  std::istringstream mf(detail::read_file(root / "MANIFEST"));
  LoadedRun run;
  std::string digest_hex, name;
  while (mf >> digest_hex >> name) {
    std::string bytes = detail::read_file(root / name);
    std::uint64_t expected = std::strtoull(digest_hex.c_str(), nullptr, 16);
    if (detail::fnv1a64(bytes) != expected)
      throw std::runtime_error("load_run: digest mismatch for " + name);
    if (name == "config.cfg") {
      run.config_text = std::move(bytes);
    } else if (name == "params.ckpt") {
      run.checkpoint_bytes = std::move(bytes);
    } else if (name == "metrics.jsonl") {
      std::istringstream ms(bytes);
      std::string line;
      while (std::getline(ms, line)) {
        if (!line.empty()) run.metric_lines.push_back(line);
      }
    }
  }
  return run;
}

}  // namespace seqvis
