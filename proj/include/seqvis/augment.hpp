#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "seqvis/dataio.hpp"

namespace seqvis {

struct JitterConfig {
  double scale_min = 0.75;
  double scale_max = 1.25;
  std::size_t out_h = 64;
  std::size_t out_w = 64;
};

/// Crop window in normalized source coordinates.
struct CropRegion {
  double ymin = 0.0, xmin = 0.0, ymax = 1.0, xmax = 1.0;

  /// Map a crop-normalized point back to source coordinates.
  Point to_source(const Point& p) const {
    return Point{ymin + p.y * (ymax - ymin), xmin + p.x * (xmax - xmin)};
  }
};

namespace detail {

struct AffineMap {
  // y' = (y * src_h * scale - oy) / out_h, and likewise for x.
  double scale, oy, ox;
  double src_h, src_w, out_h, out_w;

  Point apply(const Point& p) const {
    return Point{(p.y * src_h * scale - oy) / out_h,
                 (p.x * src_w * scale - ox) / out_w};
  }
};

inline bool in_unit(const Point& p) {
  return p.y >= 0.0 && p.y <= 1.0 && p.x >= 0.0 && p.x <= 1.0;
}

inline double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

/// Transform all annotations of a scene by one affine map, applying the
/// clipping rules: boxes clipped (dropped when empty), polygon vertices
/// clamped, out-of-window keypoints occluded.
inline void transform_annotations(SceneAnnotation& scene, const AffineMap& map) {
  std::vector<InstanceAnnotation> kept;
  std::vector<ShapeDescriptor> kept_shapes;
  bool has_shapes = scene.shapes.size() == scene.instances.size();
  for (std::size_t i = 0; i < scene.instances.size(); ++i) {
    InstanceAnnotation inst = scene.instances[i];
    Point a = map.apply(Point{inst.bbox.ymin, inst.bbox.xmin});
    Point b = map.apply(Point{inst.bbox.ymax, inst.bbox.xmax});
    BBox box{clamp01(a.y), clamp01(a.x), clamp01(b.y), clamp01(b.x)};
    if (box.height() <= 0.0 || box.width() <= 0.0) continue;
    inst.bbox = box;
    for (Polygon& poly : inst.polygons) {
      for (Point& p : poly.vertices) {
        p = map.apply(p);
        p.y = clamp01(p.y);
        p.x = clamp01(p.x);
      }
    }
    if (inst.keypoints) {
      for (Keypoint& kp : inst.keypoints->points) {
        if (kp.occluded) continue;
        Point p = map.apply(Point{kp.y, kp.x});
        if (in_unit(p)) {
          kp.y = p.y;
          kp.x = p.x;
        } else {
          kp = occluded_keypoint();
        }
      }
    }
    if (has_shapes) {
      ShapeDescriptor shape = scene.shapes[i];
      for (Point& p : shape.polygon.vertices) {
        p = map.apply(p);
        p.y = clamp01(p.y);
        p.x = clamp01(p.x);
      }
      kept_shapes.push_back(std::move(shape));
    }
    kept.push_back(std::move(inst));
  }
  scene.instances = std::move(kept);
  scene.shapes = std::move(kept_shapes);
}

inline ImageTensor transform_pixels(const ImageTensor& src, const AffineMap& map,
                                    std::size_t out_h, std::size_t out_w) {
  ImageTensor out(out_h, out_w, src.channels, 0.0f);
  for (std::size_t r = 0; r < out_h; ++r) {
    double sy = (r + 0.5 + map.oy) / map.scale;  // source pixel row
    for (std::size_t c = 0; c < out_w; ++c) {
      double sx = (c + 0.5 + map.ox) / map.scale;
      if (sy < 0 || sx < 0 || sy >= static_cast<double>(src.height) ||
          sx >= static_cast<double>(src.width))
        continue;
      std::size_t sr = static_cast<std::size_t>(sy);
      std::size_t sc = static_cast<std::size_t>(sx);
      for (std::size_t ch = 0; ch < src.channels; ++ch) {
        out.at(r, c, ch) = src.at(sr, sc, ch);
      }
    }
  }
  return out;
}

}  // namespace detail

/// Deterministic core of scale jittering: rescale the scene by `scale`
/// (aspect preserved), take the out_h x out_w window at scaled-pixel offset
/// (oy, ox), pad the remainder. scale_jitter draws these parameters.
inline SceneAnnotation apply_jitter(const SceneAnnotation& scene, double scale,
                                    double oy, double ox, std::size_t out_h,
                                    std::size_t out_w) {
  if (scale <= 0.0) throw std::invalid_argument("apply_jitter: scale must be > 0");
  detail::AffineMap map{scale,
                        oy,
                        ox,
                        static_cast<double>(scene.height),
                        static_cast<double>(scene.width),
                        static_cast<double>(out_h),
                        static_cast<double>(out_w)};
  SceneAnnotation out = scene;
  out.height = out_h;
  out.width = out_w;
  detail::transform_annotations(out, map);
  if (!scene.image.empty()) {
    out.image = detail::transform_pixels(scene.image, map, out_h, out_w);
  }
  return out;
}

/// Random aspect-preserving rescale, random fixed-size crop, pad. Captions
/// pass through unchanged.
inline SceneAnnotation scale_jitter(const SceneAnnotation& scene,
                                    const JitterConfig& cfg, Rng& rng) {
  if (!(cfg.scale_min > 0.0) || cfg.scale_max < cfg.scale_min)
    throw std::invalid_argument("scale_jitter: bad scale range");
  double scale = rng.uniform(cfg.scale_min, cfg.scale_max);
  double span_y =
      std::max(0.0, static_cast<double>(scene.height) * scale -
                        static_cast<double>(cfg.out_h));
  double span_x = std::max(0.0, static_cast<double>(scene.width) * scale -
                                    static_cast<double>(cfg.out_w));
  double oy = span_y > 0.0 ? rng.uniform(0.0, span_y) : 0.0;
  double ox = span_x > 0.0 ? rng.uniform(0.0, span_x) : 0.0;
  return apply_jitter(scene, scale, oy, ox, cfg.out_h, cfg.out_w);
}

/// Crop of the instance box scaled by `factor` about its center, intersected
/// with the image; annotations are re-expressed in crop coordinates.
inline std::pair<SceneAnnotation, CropRegion> crop_for_instance(
    const SceneAnnotation& scene, const InstanceAnnotation& inst, double factor) {
  if (factor <= 0.0)
    throw std::invalid_argument("crop_for_instance: factor must be > 0");
  double cy = (inst.bbox.ymin + inst.bbox.ymax) / 2.0;
  double cx = (inst.bbox.xmin + inst.bbox.xmax) / 2.0;
  double hh = inst.bbox.height() * factor / 2.0;
  double hw = inst.bbox.width() * factor / 2.0;
  CropRegion crop{std::max(0.0, cy - hh), std::max(0.0, cx - hw),
                  std::min(1.0, cy + hh), std::min(1.0, cx + hw)};
  if (crop.ymax - crop.ymin <= 0.0 || crop.xmax - crop.xmin <= 0.0)
    throw std::invalid_argument("crop_for_instance: empty crop");

  SceneAnnotation out = scene;
  double ch = crop.ymax - crop.ymin;
  double cw = crop.xmax - crop.xmin;
  // Crop the pixel grid along pixel boundaries.
  if (!scene.image.empty()) {
    std::size_t r0 = static_cast<std::size_t>(std::floor(crop.ymin * scene.height));
    std::size_t r1 = std::min<std::size_t>(
        scene.height, static_cast<std::size_t>(std::ceil(crop.ymax * scene.height)));
    std::size_t c0 = static_cast<std::size_t>(std::floor(crop.xmin * scene.width));
    std::size_t c1 = std::min<std::size_t>(
        scene.width, static_cast<std::size_t>(std::ceil(crop.xmax * scene.width)));
    ImageTensor sub(r1 - r0, c1 - c0, scene.image.channels);
    for (std::size_t r = r0; r < r1; ++r) {
      for (std::size_t c = c0; c < c1; ++c) {
        for (std::size_t ch2 = 0; ch2 < scene.image.channels; ++ch2) {
          sub.at(r - r0, c - c0, ch2) = scene.image.at(r, c, ch2);
        }
      }
    }
    out.image = std::move(sub);
  }
  out.height = static_cast<std::size_t>(
      std::max(1.0, std::round(ch * static_cast<double>(scene.height))));
  out.width = static_cast<std::size_t>(
      std::max(1.0, std::round(cw * static_cast<double>(scene.width))));
  // Re-express annotations in crop coordinates: an affine map with unit
  // "pixel" spaces so only the window offset and extent matter.
  detail::AffineMap map{1.0, crop.ymin / ch, crop.xmin / cw, 1.0 / ch,
                        1.0 / cw, 1.0, 1.0};
  detail::transform_annotations(out, map);
  return {std::move(out), crop};
}

/// Re-express a single instance in the coordinates of a crop window, with
/// the same clipping rules as crop_for_instance.
inline InstanceAnnotation to_crop_coords(const InstanceAnnotation& inst,
                                         const CropRegion& crop) {
  double ch = crop.ymax - crop.ymin;
  double cw = crop.xmax - crop.xmin;
  if (ch <= 0.0 || cw <= 0.0)
    throw std::invalid_argument("to_crop_coords: empty crop");
  SceneAnnotation tmp;
  tmp.instances.push_back(inst);
  detail::AffineMap map{1.0, crop.ymin / ch, crop.xmin / cw, 1.0 / ch,
                        1.0 / cw, 1.0, 1.0};
  detail::transform_annotations(tmp, map);
  if (tmp.instances.empty())
    throw std::invalid_argument("to_crop_coords: instance outside crop");
  return tmp.instances.front();
}

struct SeqAugConfig {
  std::size_t noise_count = 0;
  double max_noise_size = 0.25;
};

/// Appends synthetic noise instances with uniformly random small boxes; they
/// carry the noise class so decoders drop them.
inline std::vector<InstanceAnnotation> sequence_augment_detection(
    std::vector<InstanceAnnotation> instances, Rng& rng, const SeqAugConfig& cfg) {
  for (std::size_t i = 0; i < cfg.noise_count; ++i) {
    double h = rng.uniform(0.0, cfg.max_noise_size);
    double w = rng.uniform(0.0, cfg.max_noise_size);
    double y = rng.uniform(0.0, 1.0 - h);
    double x = rng.uniform(0.0, 1.0 - w);
    InstanceAnnotation noise;
    noise.bbox = BBox{y, x, y + h, x + w};
    noise.is_noise = true;
    instances.push_back(std::move(noise));
  }
  return instances;
}

}  // namespace seqvis
