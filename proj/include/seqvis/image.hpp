#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace seqvis {

/// Dense float image, row-major, channel-last.
struct ImageTensor {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<float> data;

  ImageTensor() = default;
  ImageTensor(std::size_t h, std::size_t w, std::size_t c, float fill = 0.0f)
      : height(h), width(w), channels(c), data(h * w * c, fill) {}

  bool empty() const { return data.empty(); }

  float at(std::size_t r, std::size_t c, std::size_t ch) const {
    return data[(r * width + c) * channels + ch];
  }
  float& at(std::size_t r, std::size_t c, std::size_t ch) {
    return data[(r * width + c) * channels + ch];
  }

  friend bool operator==(const ImageTensor&, const ImageTensor&) = default;
};

/// Nearest-neighbor resample.
inline ImageTensor resize_nearest(const ImageTensor& src, std::size_t h,
                                  std::size_t w) {
  if (src.empty()) throw std::invalid_argument("resize_nearest: empty image");
  if (h < 1 || w < 1) throw std::invalid_argument("resize_nearest: empty target");
  ImageTensor out(h, w, src.channels);
  for (std::size_t r = 0; r < h; ++r) {
    std::size_t sr = static_cast<std::size_t>((r + 0.5) * src.height / h);
    if (sr >= src.height) sr = src.height - 1;
    for (std::size_t c = 0; c < w; ++c) {
      std::size_t sc = static_cast<std::size_t>((c + 0.5) * src.width / w);
      if (sc >= src.width) sc = src.width - 1;
      for (std::size_t ch = 0; ch < src.channels; ++ch) {
        out.at(r, c, ch) = src.at(sr, sc, ch);
      }
    }
  }
  return out;
}

}  // namespace seqvis
