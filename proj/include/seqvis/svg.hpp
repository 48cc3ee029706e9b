#pragma once

#include <cstdio>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "seqvis/codecs.hpp"
#include "seqvis/geometry.hpp"

namespace seqvis {

namespace detail {

inline std::string svg_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

inline const char* svg_color(int index) {
  static const char* kColors[] = {"#e6194b", "#3cb44b", "#4363d8", "#f58231",
                                  "#911eb4", "#46f0f0", "#f032e6", "#bcf60c"};
  return kColors[index % 8];
}

}  // namespace detail

/// One <g> group per decoded instance, boxes with class/score labels.
inline std::string render_detections_svg(const DecodedDetection& boxes,
                                         std::size_t width, std::size_t height) {
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\">\n";
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const DecodedBox& b = boxes[i];
    double x = b.box.xmin * width;
    double y = b.box.ymin * height;
    double w = b.box.width() * width;
    double h = b.box.height() * height;
    const char* color = detail::svg_color(b.class_id);
    out << "<g class=\"instance\">"
        << "<rect x=\"" << detail::svg_num(x) << "\" y=\"" << detail::svg_num(y)
        << "\" width=\"" << detail::svg_num(w) << "\" height=\""
        << detail::svg_num(h) << "\" fill=\"none\" stroke=\"" << color
        << "\" stroke-width=\"2\"/>"
        << "<text x=\"" << detail::svg_num(x) << "\" y=\""
        << detail::svg_num(y - 2.0) << "\" fill=\"" << color
        << "\" font-size=\"10\">" << b.class_id << " "
        << detail::svg_num(b.score) << "</text></g>\n";
  }
  out << "</svg>\n";
  return out.str();
}

/// One <g> group per polygon of a decoded mask.
inline std::string render_polygons_svg(std::span<const Polygon> polygons,
                                       std::size_t width, std::size_t height) {
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\">\n";
  for (std::size_t i = 0; i < polygons.size(); ++i) {
    out << "<g class=\"instance\"><polygon points=\"";
    for (std::size_t j = 0; j < polygons[i].vertices.size(); ++j) {
      const Point& p = polygons[i].vertices[j];
      out << (j ? " " : "") << detail::svg_num(p.x * width) << ","
          << detail::svg_num(p.y * height);
    }
    out << "\" fill=\"" << detail::svg_color(static_cast<int>(i))
        << "\" fill-opacity=\"0.4\" stroke=\"black\"/></g>\n";
  }
  out << "</svg>\n";
  return out.str();
}

/// One <g> group per keypoint set: a circle per visible keypoint.
inline std::string render_keypoints_svg(std::span<const KeypointSet> sets,
                                        std::size_t width, std::size_t height) {
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\">\n";
  for (std::size_t i = 0; i < sets.size(); ++i) {
    out << "<g class=\"instance\">";
    for (const Keypoint& kp : sets[i].points) {
      if (kp.occluded) continue;
      out << "<circle cx=\"" << detail::svg_num(kp.x * width) << "\" cy=\""
          << detail::svg_num(kp.y * height) << "\" r=\"3\" fill=\""
          << detail::svg_color(static_cast<int>(i)) << "\"/>";
    }
    out << "</g>\n";
  }
  out << "</svg>\n";
  return out.str();
}

/// Caption rendered as a single text group.
inline std::string render_caption_svg(const std::string& caption,
                                      std::size_t width, std::size_t height) {
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\">\n"
      << "<g class=\"instance\"><text x=\"4\" y=\"" << height - 6
      << "\" font-size=\"12\">" << caption << "</text></g>\n"
      << "</svg>\n";
  return out.str();
}

}  // namespace seqvis
