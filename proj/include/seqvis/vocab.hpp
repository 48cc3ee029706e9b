#pragma once

#include <array>
#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace seqvis {

using TokenId = std::int32_t;

/// Kinds of ids in the shared token space.
enum class TokenKind {
  CoordBin,
  ClassLabel,
  NoiseClass,
  Separator,
  Eos,
  Invisible,
  PromptDetect,
  PromptSegment,
  PromptKeypoint,
  PromptCaption,
  TextToken,
};

enum class Task { Detect, Segment, Keypoint, Caption };

inline constexpr std::array<Task, 4> kAllTasks = {Task::Detect, Task::Segment,
                                                  Task::Keypoint, Task::Caption};

inline std::string_view task_tag(Task t) {
  switch (t) {
    case Task::Detect: return "detect";
    case Task::Segment: return "segment";
    case Task::Keypoint: return "keypoint";
    case Task::Caption: return "caption";
  }
  throw std::logic_error("task_tag: bad task");
}

inline Task parse_task(std::string_view tag) {
  for (Task t : kAllTasks) {
    if (task_tag(t) == tag) return t;
  }
  throw std::invalid_argument("unknown task tag: " + std::string(tag));
}

inline std::string_view kind_name(TokenKind k) {
  switch (k) {
    case TokenKind::CoordBin: return "coord_bin";
    case TokenKind::ClassLabel: return "class_label";
    case TokenKind::NoiseClass: return "noise_class";
    case TokenKind::Separator: return "separator";
    case TokenKind::Eos: return "eos";
    case TokenKind::Invisible: return "invisible";
    case TokenKind::PromptDetect: return "prompt_detect";
    case TokenKind::PromptSegment: return "prompt_segment";
    case TokenKind::PromptKeypoint: return "prompt_keypoint";
    case TokenKind::PromptCaption: return "prompt_caption";
    case TokenKind::TextToken: return "text_token";
  }
  throw std::logic_error("kind_name: bad kind");
}

struct VocabConfig {
  int num_coord_bins = 1000;
  int num_classes = 80;
  int num_text_tokens = 32000;
  int keypoint_count = 14;
};

/// The shared token-id space. Ids are laid out in a fixed order so that
/// coordinate ids equal their bin indices: coordinate bins, class labels,
/// the noise class, special tokens, prompt tokens, then text tokens.
class Vocabulary {
 public:
  struct Range {
    TokenKind kind;
    TokenId begin;  // inclusive
    TokenId end;    // exclusive
  };

  explicit Vocabulary(const VocabConfig& cfg) : cfg_(cfg) {
    if (cfg.num_coord_bins < 2)
      throw std::invalid_argument("vocabulary: num_coord_bins must be >= 2");
    if (cfg.num_classes < 1 || cfg.num_text_tokens < 1 || cfg.keypoint_count < 1)
      throw std::invalid_argument("vocabulary: all range sizes must be >= 1");
    TokenId next = 0;
    auto push = [&](TokenKind kind, TokenId count) {
      ranges_.push_back(Range{kind, next, next + count});
      next += count;
    };
    push(TokenKind::CoordBin, cfg.num_coord_bins);
    push(TokenKind::ClassLabel, cfg.num_classes);
    push(TokenKind::NoiseClass, 1);
    push(TokenKind::Separator, 1);
    push(TokenKind::Eos, 1);
    push(TokenKind::Invisible, 1);
    push(TokenKind::PromptDetect, 1);
    push(TokenKind::PromptSegment, 1);
    push(TokenKind::PromptKeypoint, 1);
    push(TokenKind::PromptCaption, 1);
    push(TokenKind::TextToken, cfg.num_text_tokens);
    total_ = next;
  }

  const VocabConfig& config() const { return cfg_; }
  TokenId total_size() const { return total_; }
  const std::vector<Range>& ranges() const { return ranges_; }

  TokenKind classify(TokenId id) const {
    if (id < 0 || id >= total_)
      throw std::out_of_range("classify: token id outside vocabulary");
    for (const Range& r : ranges_) {
      if (id < r.end) return r.kind;
    }
    throw std::logic_error("classify: layout hole");  // unreachable
  }

  TokenId coord_token(int bin) const {
    if (bin < 0 || bin >= cfg_.num_coord_bins)
      throw std::out_of_range("coord_token: bin outside range");
    return bin;
  }
  int coord_bin(TokenId id) const { return static_cast<int>(id); }

  TokenId class_base() const { return cfg_.num_coord_bins; }
  TokenId class_token(int cls) const {
    if (cls < 0 || cls >= cfg_.num_classes)
      throw std::out_of_range("class_token: class index outside range");
    return class_base() + cls;
  }
  int class_index(TokenId id) const { return static_cast<int>(id - class_base()); }

  TokenId noise_class() const { return begin_of(TokenKind::NoiseClass); }
  TokenId separator() const { return begin_of(TokenKind::Separator); }
  TokenId eos() const { return begin_of(TokenKind::Eos); }
  TokenId invisible() const { return begin_of(TokenKind::Invisible); }

  TokenId prompt_token(Task t) const {
    switch (t) {
      case Task::Detect: return begin_of(TokenKind::PromptDetect);
      case Task::Segment: return begin_of(TokenKind::PromptSegment);
      case Task::Keypoint: return begin_of(TokenKind::PromptKeypoint);
      case Task::Caption: return begin_of(TokenKind::PromptCaption);
    }
    throw std::logic_error("prompt_token: bad task");
  }

  TokenId text_base() const { return begin_of(TokenKind::TextToken); }
  TokenId text_token(unsigned char byte) const {
    if (static_cast<int>(byte) >= cfg_.num_text_tokens)
      throw std::out_of_range("text_token: byte outside text range");
    return text_base() + byte;
  }
  unsigned char text_byte(TokenId id) const {
    return static_cast<unsigned char>(id - text_base());
  }

  /// One line per range, `kind start end`, in layout order.
  void write_manifest(std::ostream& out) const {
    for (const Range& r : ranges_) {
      out << kind_name(r.kind) << " " << r.begin << " " << r.end << "\n";
    }
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    if (a.total_ != b.total_ || a.ranges_.size() != b.ranges_.size()) return false;
    for (std::size_t i = 0; i < a.ranges_.size(); ++i) {
      const Range& x = a.ranges_[i];
      const Range& y = b.ranges_[i];
      if (x.kind != y.kind || x.begin != y.begin || x.end != y.end) return false;
    }
    return true;
  }

 private:
  TokenId begin_of(TokenKind kind) const {
    for (const Range& r : ranges_) {
      if (r.kind == kind) return r.begin;
    }
    throw std::logic_error("begin_of: kind missing from layout");
  }

  VocabConfig cfg_;
  std::vector<Range> ranges_;
  TokenId total_ = 0;
};

inline Vocabulary build_vocabulary(const VocabConfig& cfg) { return Vocabulary(cfg); }

inline TokenKind classify_token(const Vocabulary& v, TokenId id) {
  return v.classify(id);
}

}  // namespace seqvis
