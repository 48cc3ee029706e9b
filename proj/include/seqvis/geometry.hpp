#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace seqvis {

/// A point in normalized image coordinates, (y, x) with both axes in [0, 1].
struct Point {
  double y = 0.0;
  double x = 0.0;
};

/// Axis-aligned box in normalized image coordinates.
struct BBox {
  double ymin = 0.0;
  double xmin = 0.0;
  double ymax = 0.0;
  double xmax = 0.0;

  double height() const { return ymax - ymin; }
  double width() const { return xmax - xmin; }
  double area() const { return height() * width(); }
};

inline bool bbox_valid(const BBox& b) {
  return b.ymin <= b.ymax && b.xmin <= b.xmax && b.ymin >= 0.0 &&
         b.xmin >= 0.0 && b.ymax <= 1.0 && b.xmax <= 1.0;
}

struct Polygon {
  std::vector<Point> vertices;
};

/// One keypoint: either a visible (y, x) location or occluded.
struct Keypoint {
  double y = 0.0;
  double x = 0.0;
  bool occluded = false;
};

inline Keypoint occluded_keypoint() { return Keypoint{0.0, 0.0, true}; }

struct KeypointSet {
  std::vector<Keypoint> points;
};

/// Row-major binary grid, one byte per pixel.
struct BinaryMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> bits;

  BinaryMask() = default;
  BinaryMask(std::size_t h, std::size_t w) : height(h), width(w), bits(h * w, 0) {}

  bool at(std::size_t r, std::size_t c) const { return bits[r * width + c] != 0; }
  void set(std::size_t r, std::size_t c, bool on) {
    bits[r * width + c] = on ? 1 : 0;
  }
  std::size_t count_on() const {
    std::size_t n = 0;
    for (std::uint8_t b : bits) n += b;
    return n;
  }
  bool same_shape(const BinaryMask& other) const {
    return height == other.height && width == other.width;
  }
  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

/// Bin index of a normalized coordinate: min(floor(v * nbins), nbins - 1).
inline int quantize(double v, int nbins) {
  if (nbins < 2) throw std::invalid_argument("quantize: nbins must be >= 2");
  if (!(v >= 0.0 && v <= 1.0))
    throw std::invalid_argument("quantize: coordinate outside [0,1]");
  int bin = static_cast<int>(std::floor(v * nbins));
  return std::min(bin, nbins - 1);
}

/// Center of a bin: (b + 0.5) / nbins.
inline double dequantize(int bin, int nbins) {
  if (nbins < 2) throw std::invalid_argument("dequantize: nbins must be >= 2");
  if (bin < 0 || bin >= nbins)
    throw std::out_of_range("dequantize: bin index outside [0, nbins)");
  return (bin + 0.5) / nbins;
}

namespace detail {

// Crossings of polygon edges with the horizontal line y = yc. Half-open rule
// in y (an edge covers [min(y1,y2), max(y1,y2)) ) so each closed polygon
// contributes an even crossing count and shared vertices count once.
inline void row_crossings(const Polygon& poly, double yc, std::vector<double>& xs) {
  const auto& v = poly.vertices;
  std::size_t n = v.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Point& a = v[i];
    const Point& b = v[(i + 1) % n];
    if ((a.y <= yc) != (b.y <= yc)) {
      xs.push_back(a.x + (yc - a.y) * (b.x - a.x) / (b.y - a.y));
    }
  }
}

}  // namespace detail

/// Scanline even-odd fill of the union of polygons onto an h x w grid.
/// Pixel (r, c) is on iff its center ((r+.5)/h, (c+.5)/w) is inside any
/// polygon; boundary points count as inside.
inline BinaryMask rasterize(std::span<const Polygon> polygons, std::size_t h,
                            std::size_t w) {
  if (h < 1 || w < 1) throw std::invalid_argument("rasterize: empty grid");
  for (const Polygon& p : polygons) {
    if (p.vertices.size() < 3)
      throw std::invalid_argument("rasterize: polygon with fewer than 3 vertices");
  }
  BinaryMask mask(h, w);
  std::vector<double> xs;
  for (std::size_t r = 0; r < h; ++r) {
    double yc = (r + 0.5) / static_cast<double>(h);
    for (const Polygon& poly : polygons) {
      xs.clear();
      detail::row_crossings(poly, yc, xs);
      if (xs.empty()) continue;
      std::sort(xs.begin(), xs.end());
      // Inside iff the count of crossings strictly left of the pixel center
      // is odd; walk crossings and columns together.
      std::size_t k = 0;
      for (std::size_t c = 0; c < w; ++c) {
        double xc = (c + 0.5) / static_cast<double>(w);
        while (k < xs.size() && xs[k] < xc) ++k;
        if (k % 2 == 1) mask.set(r, c, true);
      }
    }
  }
  return mask;
}

inline BinaryMask rasterize(const std::vector<Polygon>& polygons, std::size_t h,
                            std::size_t w) {
  return rasterize(std::span<const Polygon>(polygons), h, w);
}

/// Intersection-over-union of two boxes; 0 when the union has zero area.
inline double box_iou(const BBox& a, const BBox& b) {
  double iy = std::min(a.ymax, b.ymax) - std::max(a.ymin, b.ymin);
  double ix = std::min(a.xmax, b.xmax) - std::max(a.xmin, b.xmin);
  double inter = (iy > 0.0 && ix > 0.0) ? iy * ix : 0.0;
  double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

/// Intersection-over-union of two masks of identical shape; 0 when both empty.
inline double mask_iou(const BinaryMask& a, const BinaryMask& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("mask_iou: shape mismatch");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    bool pa = a.bits[i] != 0, pb = b.bits[i] != 0;
    inter += (pa && pb) ? 1 : 0;
    uni += (pa || pb) ? 1 : 0;
  }
  return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

/// PBM (P4) writer, used for golden-file tests.
inline void write_pbm(std::ostream& out, const BinaryMask& mask) {
  out << "P4\n" << mask.width << " " << mask.height << "\n";
  std::size_t row_bytes = (mask.width + 7) / 8;
  std::vector<unsigned char> row(row_bytes);
  for (std::size_t r = 0; r < mask.height; ++r) {
    std::fill(row.begin(), row.end(), 0);
    for (std::size_t c = 0; c < mask.width; ++c) {
      if (mask.at(r, c)) row[c / 8] |= static_cast<unsigned char>(0x80u >> (c % 8));
    }
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row_bytes));
  }
}

inline BinaryMask read_pbm(std::istream& in) {
  std::string magic;
  in >> magic;
  if (magic != "P4") throw std::runtime_error("read_pbm: not a P4 stream");
  std::size_t w = 0, h = 0;
  in >> w >> h;
  in.get();  // single whitespace after the header
  if (!in || w < 1 || h < 1) throw std::runtime_error("read_pbm: bad header");
  BinaryMask mask(h, w);
  std::size_t row_bytes = (w + 7) / 8;
  std::vector<char> row(row_bytes);
  for (std::size_t r = 0; r < h; ++r) {
    in.read(row.data(), static_cast<std::streamsize>(row_bytes));
    if (!in) throw std::runtime_error("read_pbm: truncated payload");
    for (std::size_t c = 0; c < w; ++c) {
      bool on = (static_cast<unsigned char>(row[c / 8]) >> (7 - c % 8)) & 1u;
      mask.set(r, c, on);
    }
  }
  return mask;
}

}  // namespace seqvis
