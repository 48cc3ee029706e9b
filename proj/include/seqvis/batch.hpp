#pragma once

#include <optional>
#include <vector>

#include "seqvis/codecs.hpp"
#include "seqvis/image.hpp"

namespace seqvis {

struct TrainExample {
  ImageTensor image;
  TokenSequence seq;
};

/// A drawn batch plus the gradient weight its loss is scaled by. Under batch
/// mixing all examples share one task; a data-mixed batch has no task tag.
struct TrainingBatch {
  std::optional<Task> task;
  std::vector<TrainExample> examples;
  double gradient_weight = 1.0;
};

struct MixedExample {
  Task task = Task::Detect;
  ImageTensor image;
  TokenSequence seq;
};

}  // namespace seqvis
