#pragma once

#include <cstdio>
#include <cstdlib>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "seqvis/geometry.hpp"
#include "seqvis/rng.hpp"
#include "seqvis/vocab.hpp"

namespace seqvis {

/// Ground-truth instance: box, class, optional polygons and keypoints.
struct InstanceAnnotation {
  BBox bbox;
  int class_id = 0;
  std::vector<Polygon> polygons;
  std::optional<KeypointSet> keypoints;
  bool is_noise = false;
};

/// Token ids with per-position loss weights; positions before prompt_len are
/// the task prompt and carry weight zero.
struct TokenSequence {
  std::vector<TokenId> ids;
  std::vector<double> weights;
  std::size_t prompt_len = 0;

  std::size_t size() const { return ids.size(); }
  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

/// Task selector plus the optional condition box ("given instance") that the
/// segmentation and keypoint tasks are prompted with.
struct TaskPrompt {
  Task task = Task::Detect;
  std::optional<BBox> condition;

  static TaskPrompt detect() { return {Task::Detect, std::nullopt}; }
  static TaskPrompt caption() { return {Task::Caption, std::nullopt}; }
  static TaskPrompt segment(const BBox& box) { return {Task::Segment, box}; }
  static TaskPrompt keypoint(const BBox& box) { return {Task::Keypoint, box}; }
};

struct CodecConfig {
  std::size_t max_seq_len = 512;
  std::size_t max_polygon_points = 128;  // total vertices per instance
  double invisible_weight = 0.1;         // loss weight on occlusion tokens
};

struct DecodedBox {
  BBox box;
  int class_id = 0;
  double score = 1.0;
};

using DecodedDetection = std::vector<DecodedBox>;

inline std::vector<TokenId> prompt_tokens(const TaskPrompt& prompt,
                                          const Vocabulary& v) {
  bool needs_box = prompt.task == Task::Segment || prompt.task == Task::Keypoint;
  if (needs_box && !prompt.condition)
    throw std::invalid_argument("prompt: segment/keypoint require a condition box");
  if (!needs_box && prompt.condition)
    throw std::invalid_argument("prompt: detect/caption carry no condition box");
  std::vector<TokenId> ids;
  ids.push_back(v.prompt_token(prompt.task));
  if (prompt.condition) {
    int nbins = v.config().num_coord_bins;
    const BBox& b = *prompt.condition;
    ids.push_back(v.coord_token(quantize(b.ymin, nbins)));
    ids.push_back(v.coord_token(quantize(b.xmin, nbins)));
    ids.push_back(v.coord_token(quantize(b.ymax, nbins)));
    ids.push_back(v.coord_token(quantize(b.xmax, nbins)));
  }
  return ids;
}

/// Prepend the prompt (weight 0) to a body sequence whose weights are kept.
inline TokenSequence assemble_training_sequence(const TaskPrompt& prompt,
                                                const TokenSequence& body,
                                                const Vocabulary& v,
                                                const CodecConfig& cfg = {}) {
  std::vector<TokenId> head = prompt_tokens(prompt, v);
  if (head.size() + body.ids.size() > cfg.max_seq_len)
    throw std::length_error("sequence exceeds max_seq_len=" +
                            std::to_string(cfg.max_seq_len));
  TokenSequence out;
  out.prompt_len = head.size();
  out.ids = std::move(head);
  out.weights.assign(out.ids.size(), 0.0);
  out.ids.insert(out.ids.end(), body.ids.begin(), body.ids.end());
  out.weights.insert(out.weights.end(), body.weights.begin(), body.weights.end());
  return out;
}

// --------------------------------------------------------------------------
// Detection
// --------------------------------------------------------------------------

/// [prompt, (ymin xmin ymax xmax class) per instance in random order, eos].
inline TokenSequence encode_detection(std::span<const InstanceAnnotation> instances,
                                      const Vocabulary& v, Rng& rng,
                                      const CodecConfig& cfg = {}) {
  std::size_t total = 1 + 5 * instances.size() + 1;
  if (total > cfg.max_seq_len)
    throw std::length_error("detection sequence exceeds max_seq_len=" +
                            std::to_string(cfg.max_seq_len));
  std::vector<std::size_t> order(instances.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);

  int nbins = v.config().num_coord_bins;
  TokenSequence body;
  for (std::size_t idx : order) {
    const InstanceAnnotation& inst = instances[idx];
    if (!bbox_valid(inst.bbox))
      throw std::invalid_argument("encode_detection: invalid bbox");
    body.ids.push_back(v.coord_token(quantize(inst.bbox.ymin, nbins)));
    body.ids.push_back(v.coord_token(quantize(inst.bbox.xmin, nbins)));
    body.ids.push_back(v.coord_token(quantize(inst.bbox.ymax, nbins)));
    body.ids.push_back(v.coord_token(quantize(inst.bbox.xmax, nbins)));
    body.ids.push_back(inst.is_noise ? v.noise_class()
                                     : v.class_token(inst.class_id));
  }
  body.ids.push_back(v.eos());
  body.weights.assign(body.ids.size(), 1.0);
  return assemble_training_sequence(TaskPrompt::detect(), body, v, cfg);
}

/// Tolerant 5-token tuple parse of a generated suffix. Tuples with a
/// wrong-kind token and a trailing incomplete tuple are dropped and tallied;
/// noise-class tuples are dropped silently. Scores come from the per-step
/// probability of the class token when given.
inline DecodedDetection decode_detection(std::span<const TokenId> ids,
                                         const std::vector<double>* per_step_probs,
                                         const Vocabulary& v,
                                         std::size_t* warnings = nullptr) {
  if (per_step_probs && per_step_probs->size() < ids.size())
    throw std::invalid_argument("decode_detection: probs shorter than ids");
  DecodedDetection out;
  int nbins = v.config().num_coord_bins;
  std::size_t pos = 0;
  while (pos < ids.size()) {
    if (v.classify(ids[pos]) == TokenKind::Eos) break;
    if (ids.size() - pos < 5) {
      if (warnings) ++*warnings;
      break;
    }
    bool truncated = false;
    for (std::size_t j = pos; j < pos + 5; ++j) {
      if (v.classify(ids[j]) == TokenKind::Eos) {
        truncated = true;
        break;
      }
    }
    if (truncated) {
      if (warnings) ++*warnings;
      break;
    }
    bool ok = true;
    for (std::size_t j = pos; j < pos + 4; ++j) {
      if (v.classify(ids[j]) != TokenKind::CoordBin) ok = false;
    }
    TokenKind cls_kind = v.classify(ids[pos + 4]);
    if (cls_kind != TokenKind::ClassLabel && cls_kind != TokenKind::NoiseClass)
      ok = false;
    if (!ok) {
      if (warnings) ++*warnings;
      pos += 5;
      continue;
    }
    if (cls_kind == TokenKind::NoiseClass) {
      pos += 5;
      continue;
    }
    double y0 = dequantize(v.coord_bin(ids[pos]), nbins);
    double x0 = dequantize(v.coord_bin(ids[pos + 1]), nbins);
    double y1 = dequantize(v.coord_bin(ids[pos + 2]), nbins);
    double x1 = dequantize(v.coord_bin(ids[pos + 3]), nbins);
    DecodedBox box;
    // Sampled coordinates can come out inverted; normalize so the box is
    // well formed.
    box.box = BBox{std::min(y0, y1), std::min(x0, x1), std::max(y0, y1),
                   std::max(x0, x1)};
    box.class_id = v.class_index(ids[pos + 4]);
    box.score = per_step_probs ? (*per_step_probs)[pos + 4] : 1.0;
    out.push_back(box);
    pos += 5;
  }
  return out;
}

// --------------------------------------------------------------------------
// Segmentation
// --------------------------------------------------------------------------

namespace detail {

/// Uniform-stride vertex downsampling so the instance total stays within cap.
inline std::vector<Polygon> cap_total_vertices(const std::vector<Polygon>& polys,
                                               std::size_t cap) {
  std::size_t total = 0;
  for (const Polygon& p : polys) total += p.vertices.size();
  if (total <= cap) return polys;
  double scale = static_cast<double>(cap) / static_cast<double>(total);
  std::vector<Polygon> out;
  out.reserve(polys.size());
  for (const Polygon& p : polys) {
    std::size_t n = p.vertices.size();
    std::size_t target =
        std::max<std::size_t>(3, static_cast<std::size_t>(n * scale));
    if (target >= n) {
      out.push_back(p);
      continue;
    }
    Polygon q;
    q.vertices.reserve(target);
    for (std::size_t i = 0; i < target; ++i) {
      q.vertices.push_back(p.vertices[i * n / target]);
    }
    out.push_back(std::move(q));
  }
  return out;
}

}  // namespace detail

/// [prompt + condition box, polygon vertices from a random start vertex,
/// separator between polygons, eos].
inline TokenSequence encode_segmentation(const InstanceAnnotation& inst,
                                         const Vocabulary& v, Rng& rng,
                                         const CodecConfig& cfg = {}) {
  if (inst.polygons.empty())
    throw std::invalid_argument("encode_segmentation: instance has no polygons");
  std::vector<Polygon> polys =
      detail::cap_total_vertices(inst.polygons, cfg.max_polygon_points);
  int nbins = v.config().num_coord_bins;
  TokenSequence body;
  for (std::size_t pi = 0; pi < polys.size(); ++pi) {
    if (pi > 0) body.ids.push_back(v.separator());
    const auto& verts = polys[pi].vertices;
    if (verts.size() < 3)
      throw std::invalid_argument("encode_segmentation: degenerate polygon");
    std::size_t start = static_cast<std::size_t>(rng.uniform_index(verts.size()));
    for (std::size_t i = 0; i < verts.size(); ++i) {
      const Point& p = verts[(start + i) % verts.size()];
      body.ids.push_back(v.coord_token(quantize(p.y, nbins)));
      body.ids.push_back(v.coord_token(quantize(p.x, nbins)));
    }
  }
  body.ids.push_back(v.eos());
  body.weights.assign(body.ids.size(), 1.0);
  return assemble_training_sequence(TaskPrompt::segment(inst.bbox), body, v, cfg);
}

/// Polygons recovered from a generated suffix: split on separators, pair
/// coordinate tokens into vertices. A trailing unpaired coordinate, any
/// foreign token, and polygons left with fewer than 3 vertices are dropped
/// and tallied.
inline std::vector<Polygon> decode_segmentation_polygons(
    std::span<const TokenId> ids, const Vocabulary& v,
    std::size_t* warnings = nullptr) {
  int nbins = v.config().num_coord_bins;
  std::vector<Polygon> polys;
  std::vector<int> bins;
  bool segment_had_tokens = false;
  auto flush = [&]() {
    if (bins.size() % 2 == 1) {
      bins.pop_back();
      if (warnings) ++*warnings;
    }
    Polygon poly;
    for (std::size_t i = 0; i + 1 < bins.size(); i += 2) {
      poly.vertices.push_back(
          Point{dequantize(bins[i], nbins), dequantize(bins[i + 1], nbins)});
    }
    if (poly.vertices.size() >= 3) {
      polys.push_back(std::move(poly));
    } else if (segment_had_tokens) {
      if (warnings) ++*warnings;
    }
    bins.clear();
    segment_had_tokens = false;
  };
  for (TokenId id : ids) {
    TokenKind kind = v.classify(id);
    if (kind == TokenKind::Eos) break;
    if (kind == TokenKind::Separator) {
      flush();
      continue;
    }
    if (kind != TokenKind::CoordBin) {
      if (warnings) ++*warnings;
      continue;
    }
    segment_had_tokens = true;
    bins.push_back(v.coord_bin(id));
  }
  flush();
  return polys;
}

inline BinaryMask decode_segmentation_sample(std::span<const TokenId> ids,
                                             const Vocabulary& v, std::size_t h,
                                             std::size_t w,
                                             std::size_t* warnings = nullptr) {
  std::vector<Polygon> polys = decode_segmentation_polygons(ids, v, warnings);
  return rasterize(polys, h, w);
}

/// Strict per-pixel majority over independently sampled masks: a pixel is on
/// iff it is on in more than half of the samples.
inline BinaryMask vote_masks(std::span<const BinaryMask> samples) {
  if (samples.empty()) throw std::invalid_argument("vote_masks: no samples");
  const BinaryMask& first = samples[0];
  for (const BinaryMask& m : samples) {
    if (!m.same_shape(first))
      throw std::invalid_argument("vote_masks: shape mismatch");
  }
  BinaryMask out(first.height, first.width);
  for (std::size_t i = 0; i < out.bits.size(); ++i) {
    std::size_t on = 0;
    for (const BinaryMask& m : samples) on += m.bits[i];
    out.bits[i] = (2 * on > samples.size()) ? 1 : 0;
  }
  return out;
}

inline BinaryMask vote_masks(const std::vector<BinaryMask>& samples) {
  return vote_masks(std::span<const BinaryMask>(samples));
}

// --------------------------------------------------------------------------
// Keypoints
// --------------------------------------------------------------------------

/// [prompt + condition box, (y x | invisible invisible) per keypoint in fixed
/// order, eos]. Occlusion tokens carry a reduced loss weight.
inline TokenSequence encode_keypoints(const InstanceAnnotation& inst,
                                      const Vocabulary& v,
                                      const CodecConfig& cfg = {}) {
  if (!inst.keypoints)
    throw std::invalid_argument("encode_keypoints: instance has no keypoint set");
  int expected = v.config().keypoint_count;
  if (static_cast<int>(inst.keypoints->points.size()) != expected)
    throw std::invalid_argument("encode_keypoints: keypoint count mismatch");
  int nbins = v.config().num_coord_bins;
  TokenSequence body;
  for (const Keypoint& kp : inst.keypoints->points) {
    if (kp.occluded) {
      body.ids.push_back(v.invisible());
      body.ids.push_back(v.invisible());
      body.weights.push_back(cfg.invisible_weight);
      body.weights.push_back(cfg.invisible_weight);
    } else {
      body.ids.push_back(v.coord_token(quantize(kp.y, nbins)));
      body.ids.push_back(v.coord_token(quantize(kp.x, nbins)));
      body.weights.push_back(1.0);
      body.weights.push_back(1.0);
    }
  }
  body.ids.push_back(v.eos());
  body.weights.push_back(1.0);
  return assemble_training_sequence(TaskPrompt::keypoint(inst.bbox), body, v, cfg);
}

/// Expects exactly 2K coordinate-or-invisible tokens (a trailing eos is
/// ignored); pairs containing an invisible token decode as occluded.
inline KeypointSet decode_keypoints(std::span<const TokenId> ids,
                                    const Vocabulary& v) {
  std::size_t len = ids.size();
  if (len > 0 && v.classify(ids[len - 1]) == TokenKind::Eos) --len;
  std::size_t expected = 2 * static_cast<std::size_t>(v.config().keypoint_count);
  if (len != expected)
    throw std::invalid_argument("decode_keypoints: expected " +
                                std::to_string(expected) + " tokens, got " +
                                std::to_string(len));
  int nbins = v.config().num_coord_bins;
  KeypointSet out;
  for (std::size_t i = 0; i < len; i += 2) {
    TokenKind ka = v.classify(ids[i]);
    TokenKind kb = v.classify(ids[i + 1]);
    if (ka == TokenKind::Invisible || kb == TokenKind::Invisible) {
      out.points.push_back(occluded_keypoint());
      continue;
    }
    if (ka != TokenKind::CoordBin || kb != TokenKind::CoordBin)
      throw std::invalid_argument("decode_keypoints: non-coordinate token");
    out.points.push_back(Keypoint{dequantize(v.coord_bin(ids[i]), nbins),
                                  dequantize(v.coord_bin(ids[i + 1]), nbins),
                                  false});
  }
  return out;
}

// --------------------------------------------------------------------------
// Captioning
// --------------------------------------------------------------------------

/// Byte-level text tokens; over-long captions are truncated at a byte
/// boundary and tallied.
inline TokenSequence encode_caption(std::string_view text, const Vocabulary& v,
                                    const CodecConfig& cfg = {},
                                    std::size_t* warnings = nullptr) {
  if (text.empty()) throw std::invalid_argument("encode_caption: empty text");
  std::size_t budget = cfg.max_seq_len >= 3 ? cfg.max_seq_len - 2 : 0;
  std::size_t n = text.size();
  if (n > budget) {
    n = budget;
    if (warnings) ++*warnings;
  }
  TokenSequence body;
  for (std::size_t i = 0; i < n; ++i) {
    body.ids.push_back(v.text_token(static_cast<unsigned char>(text[i])));
  }
  body.ids.push_back(v.eos());
  body.weights.assign(body.ids.size(), 1.0);
  return assemble_training_sequence(TaskPrompt::caption(), body, v, cfg);
}

inline std::string decode_caption(std::span<const TokenId> ids, const Vocabulary& v,
                                  std::size_t* warnings = nullptr) {
  std::string out;
  for (TokenId id : ids) {
    TokenKind kind = v.classify(id);
    if (kind == TokenKind::Eos) break;
    if (kind != TokenKind::TextToken) {
      if (warnings) ++*warnings;
      continue;
    }
    out.push_back(static_cast<char>(v.text_byte(id)));
  }
  return out;
}

// --------------------------------------------------------------------------
// Sequence stream format
// --------------------------------------------------------------------------

namespace detail {

/// Shortest decimal form that parses back to the same double.
inline std::string format_weight(double w) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%g", w);
  if (std::strtod(buf, nullptr) != w) {
    std::snprintf(buf, sizeof(buf), "%.17g", w);
  }
  return buf;
}

}  // namespace detail

struct SequenceRecord {
  Task task = Task::Detect;
  TokenSequence seq;
  friend bool operator==(const SequenceRecord&, const SequenceRecord&) = default;
};

/// One record per line: `task_tag prompt_len id:weight id:weight ...`
inline void write_sequence_record(std::ostream& out, const SequenceRecord& rec) {
  out << task_tag(rec.task) << " " << rec.seq.prompt_len;
  for (std::size_t i = 0; i < rec.seq.ids.size(); ++i) {
    out << " " << rec.seq.ids[i] << ":" << detail::format_weight(rec.seq.weights[i]);
  }
  out << "\n";
}

inline std::vector<SequenceRecord> read_sequence_stream(std::istream& in) {
  std::vector<SequenceRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tag;
    SequenceRecord rec;
    if (!(ls >> tag >> rec.seq.prompt_len))
      throw std::runtime_error("sequence stream: bad record at line " +
                               std::to_string(line_no));
    rec.task = parse_task(tag);
    std::string tok;
    while (ls >> tok) {
      std::size_t colon = tok.find(':');
      if (colon == std::string::npos)
        throw std::runtime_error("sequence stream: missing weight at line " +
                                 std::to_string(line_no));
      rec.seq.ids.push_back(static_cast<TokenId>(std::stol(tok.substr(0, colon))));
      rec.seq.weights.push_back(std::strtod(tok.c_str() + colon + 1, nullptr));
    }
    if (rec.seq.prompt_len > rec.seq.ids.size())
      throw std::runtime_error("sequence stream: prompt_len exceeds length at line " +
                               std::to_string(line_no));
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace seqvis
