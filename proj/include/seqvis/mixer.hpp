#pragma once

#include <cmath>
#include <istream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "seqvis/augment.hpp"
#include "seqvis/batch.hpp"
#include "seqvis/codecs.hpp"
#include "seqvis/dataio.hpp"

namespace seqvis {

enum class MixStrategy { DataMix, BatchMix };

/// One task's slice of the training mix: its weight, data, and the
/// augmentation/codec settings used when drawing from it.
struct TaskSource {
  Task task = Task::Detect;
  double weight = 0.0;
  std::vector<SceneAnnotation> scenes;
  std::string data_path;  // provenance only

  bool use_jitter = false;
  JitterConfig jitter{};
  SeqAugConfig seq_aug{};       // detection sequence augmentation
  double crop_factor = 2.0;     // keypoint instance crops
  bool crop_instances = true;   // crop keypoint examples to the instance
};

struct TaskMixConfig {
  MixStrategy strategy = MixStrategy::BatchMix;
  std::vector<TaskSource> tasks;

  double weight_sum() const {
    double s = 0.0;
    for (const TaskSource& t : tasks) s += t.weight;
    return s;
  }
};

namespace detail {

inline void require_weights_valid(const TaskMixConfig& cfg) {
  for (const TaskSource& t : cfg.tasks) {
    if (t.weight < 0.0)
      throw std::invalid_argument("task mix: negative task weight");
  }
  if (std::abs(cfg.weight_sum() - 1.0) > 1e-9)
    throw std::invalid_argument("task mix: weights must sum to 1");
}

/// Enumerate the drawable units of a task: (scene index, item index).
/// Detection uses whole scenes; segmentation and keypoints use instances
/// with the relevant annotation; captioning uses individual captions.
inline std::vector<std::pair<std::size_t, std::size_t>> task_units(
    const TaskSource& src) {
  std::vector<std::pair<std::size_t, std::size_t>> units;
  for (std::size_t si = 0; si < src.scenes.size(); ++si) {
    const SceneAnnotation& scene = src.scenes[si];
    switch (src.task) {
      case Task::Detect:
        units.emplace_back(si, 0);
        break;
      case Task::Segment:
        for (std::size_t ii = 0; ii < scene.instances.size(); ++ii) {
          if (!scene.instances[ii].polygons.empty()) units.emplace_back(si, ii);
        }
        break;
      case Task::Keypoint:
        for (std::size_t ii = 0; ii < scene.instances.size(); ++ii) {
          if (scene.instances[ii].keypoints) units.emplace_back(si, ii);
        }
        break;
      case Task::Caption:
        for (std::size_t ci = 0; ci < scene.captions.size(); ++ci) {
          units.emplace_back(si, ci);
        }
        break;
    }
  }
  return units;
}

/// Build one (image, sequence) pair for a unit of a task. `image_level`
/// enables the image-space augmentations (jitter, instance crops); data
/// mixing turns them off because pre-tokenized pools cannot re-augment.
inline TrainExample make_example(const TaskSource& src,
                                 std::pair<std::size_t, std::size_t> unit,
                                 const Vocabulary& vocab, const CodecConfig& codec,
                                 std::size_t image_size, bool image_level,
                                 Rng& rng) {
  const SceneAnnotation& base = src.scenes[unit.first];
  TrainExample ex;
  switch (src.task) {
    case Task::Detect: {
      SceneAnnotation scene =
          (image_level && src.use_jitter) ? scale_jitter(base, src.jitter, rng) : base;
      std::vector<InstanceAnnotation> instances =
          sequence_augment_detection(scene.instances, rng, src.seq_aug);
      ex.seq = encode_detection(instances, vocab, rng, codec);
      ex.image = scene_pixels(scene, image_size);
      break;
    }
    case Task::Segment: {
      ex.seq = encode_segmentation(base.instances[unit.second], vocab, rng, codec);
      ex.image = scene_pixels(base, image_size);
      break;
    }
    case Task::Keypoint: {
      const InstanceAnnotation& inst = base.instances[unit.second];
      if (image_level && src.crop_instances) {
        auto [cropped, region] = crop_for_instance(base, inst, src.crop_factor);
        ex.seq = encode_keypoints(to_crop_coords(inst, region), vocab, codec);
        ex.image = scene_pixels(cropped, image_size);
      } else {
        ex.seq = encode_keypoints(inst, vocab, codec);
        ex.image = scene_pixels(base, image_size);
      }
      break;
    }
    case Task::Caption: {
      ex.seq = encode_caption(base.captions[unit.second], vocab, codec);
      ex.image = scene_pixels(base, image_size);
      break;
    }
  }
  return ex;
}

inline std::size_t sample_task_index(const TaskMixConfig& cfg, Rng& rng) {
  double u = rng.uniform() * cfg.weight_sum();
  double acc = 0.0;
  for (std::size_t i = 0; i < cfg.tasks.size(); ++i) {
    acc += cfg.tasks[i].weight;
    if (u < acc) return i;
  }
  return cfg.tasks.size() - 1;
}

}  // namespace detail

/// Batch mixing: sample a task with probability proportional to its weight,
/// draw a single-task batch with that task's augmentations, and tag it with
/// the task weight as gradient weight.
inline TrainingBatch next_batch_batchmix(const TaskMixConfig& cfg,
                                         const Vocabulary& vocab,
                                         const CodecConfig& codec,
                                         std::size_t batch_size,
                                         std::size_t image_size, Rng& rng) {
  if (cfg.strategy != MixStrategy::BatchMix)
    throw std::invalid_argument("next_batch_batchmix: strategy is not batch mixing");
  if (cfg.tasks.empty()) throw std::invalid_argument("next_batch_batchmix: no tasks");
  detail::require_weights_valid(cfg);
  if (batch_size < 1)
    throw std::invalid_argument("next_batch_batchmix: empty batch");
  const TaskSource& src = cfg.tasks[detail::sample_task_index(cfg, rng)];
  auto units = detail::task_units(src);
  if (units.empty())
    throw std::runtime_error(std::string("next_batch_batchmix: no data for task ") +
                             std::string(task_tag(src.task)));
  TrainingBatch batch;
  batch.task = src.task;
  batch.gradient_weight = src.weight;
  for (std::size_t i = 0; i < batch_size; ++i) {
    auto unit = units[rng.uniform_index(units.size())];
    batch.examples.push_back(
        detail::make_example(src, unit, vocab, codec, image_size, true, rng));
  }
  return batch;
}

/// Data mixing: tokenize everything up front (sequence-level augmentations
/// only), replicate or subsample each task so pool proportions match the
/// weights within one example, then shuffle.
inline std::vector<MixedExample> build_mixed_dataset(const TaskMixConfig& cfg,
                                                     const Vocabulary& vocab,
                                                     const CodecConfig& codec,
                                                     std::size_t image_size,
                                                     Rng& rng) {
  if (cfg.strategy != MixStrategy::DataMix)
    throw std::invalid_argument("build_mixed_dataset: strategy is not data mixing");
  detail::require_weights_valid(cfg);

  // Pool size: keep the task that constrains the mix fully represented.
  double pool = 0.0;
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> units(cfg.tasks.size());
  for (std::size_t t = 0; t < cfg.tasks.size(); ++t) {
    if (cfg.tasks[t].weight <= 0.0) continue;
    units[t] = detail::task_units(cfg.tasks[t]);
    if (units[t].empty())
      throw std::runtime_error(std::string("build_mixed_dataset: no data for task ") +
                               std::string(task_tag(cfg.tasks[t].task)));
    pool = std::max(pool, static_cast<double>(units[t].size()) / cfg.tasks[t].weight);
  }
  std::vector<MixedExample> mixed;
  for (std::size_t t = 0; t < cfg.tasks.size(); ++t) {
    const TaskSource& src = cfg.tasks[t];
    if (src.weight <= 0.0) continue;
    std::size_t n = units[t].size();
    std::size_t target = static_cast<std::size_t>(std::llround(pool * src.weight));
    std::size_t full_copies = target / n;
    std::size_t remainder = target % n;
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order);
    for (std::size_t i = 0; i < full_copies * n + remainder; ++i) {
      auto unit = units[t][i < full_copies * n ? i % n : order[i - full_copies * n]];
      MixedExample ex;
      ex.task = src.task;
      TrainExample te =
          detail::make_example(src, unit, vocab, codec, image_size, false, rng);
      ex.image = std::move(te.image);
      ex.seq = std::move(te.seq);
      mixed.push_back(std::move(ex));
    }
  }
  rng.shuffle(mixed);
  return mixed;
}

/// For each candidate weight w, a config where the new task enters at w and
/// existing weights are rescaled by (1 - w), preserving their ratios.
inline std::vector<TaskMixConfig> greedy_weight_step(
    const TaskMixConfig& existing, const TaskSource& new_task,
    std::span<const double> candidate_weights) {
  std::vector<TaskMixConfig> out;
  for (double w : candidate_weights) {
    if (!(w > 0.0 && w < 1.0))
      throw std::invalid_argument("greedy_weight_step: candidate weight outside (0,1)");
    TaskMixConfig cfg = existing;
    for (TaskSource& t : cfg.tasks) t.weight *= (1.0 - w);
    TaskSource added = new_task;
    added.weight = w;
    cfg.tasks.push_back(std::move(added));
    out.push_back(std::move(cfg));
  }
  return out;
}

// --------------------------------------------------------------------------
// Config file: `key = value` lines, `#` comments.
// --------------------------------------------------------------------------

struct ConfigFile {
  std::vector<std::pair<std::string, std::string>> entries;

  const std::string* find(const std::string& key) const {
    for (const auto& [k, v] : entries) {
      if (k == key) return &v;
    }
    return nullptr;
  }
  std::string get_or(const std::string& key, const std::string& fallback) const {
    const std::string* v = find(key);
    return v ? *v : fallback;
  }
  double get_double(const std::string& key, double fallback) const {
    const std::string* v = find(key);
    return v ? std::stod(*v) : fallback;
  }
  long get_long(const std::string& key, long fallback) const {
    const std::string* v = find(key);
    return v ? std::stol(*v) : fallback;
  }
};

inline ConfigFile parse_config(std::istream& in) {
  ConfigFile cfg;
  std::string line;
  std::size_t line_no = 0;
  auto trim = [](std::string s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    std::size_t e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: missing '=' at line " +
                               std::to_string(line_no));
    cfg.entries.emplace_back(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return cfg;
}

/// Extract `mix.strategy`, `task.<name>.weight`, and `task.<name>.data` into
/// a TaskMixConfig; the datasets themselves are loaded by the caller.
inline TaskMixConfig mix_config_from(const ConfigFile& file) {
  TaskMixConfig cfg;
  std::string strategy = file.get_or("mix.strategy", "batchmix");
  if (strategy == "batchmix") {
    cfg.strategy = MixStrategy::BatchMix;
  } else if (strategy == "datamix") {
    cfg.strategy = MixStrategy::DataMix;
  } else {
    throw std::runtime_error("config: unknown mix.strategy '" + strategy + "'");
  }
  for (Task t : kAllTasks) {
    std::string prefix = "task." + std::string(task_tag(t)) + ".";
    const std::string* weight = file.find(prefix + "weight");
    if (!weight) continue;
    TaskSource src;
    src.task = t;
    src.weight = std::stod(*weight);
    src.data_path = file.get_or(prefix + "data", "");
    src.seq_aug.noise_count =
        static_cast<std::size_t>(file.get_long(prefix + "noise", 0));
    cfg.tasks.push_back(std::move(src));
  }
  return cfg;
}

}  // namespace seqvis
