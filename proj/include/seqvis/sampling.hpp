#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <future>
#include <numeric>
#include <span>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "seqvis/codecs.hpp"
#include "seqvis/image.hpp"
#include "seqvis/rng.hpp"
#include "seqvis/vocab.hpp"

namespace seqvis {

/// Weighted negative log-likelihood: -sum_j w_j log P(ids[j]) over positions
/// j >= 1, one predicted distribution per position. Prompt positions carry
/// weight zero and contribute nothing.
inline double weighted_nll(const std::vector<std::vector<double>>& probs_per_step,
                           const TokenSequence& seq) {
  if (seq.ids.size() != seq.weights.size())
    throw std::invalid_argument("weighted_nll: ids/weights length mismatch");
  if (seq.ids.empty()) return 0.0;
  if (probs_per_step.size() != seq.ids.size() - 1)
    throw std::invalid_argument("weighted_nll: need one distribution per position j>=1");
  double loss = 0.0;
  for (std::size_t j = 1; j < seq.ids.size(); ++j) {
    double w = seq.weights[j];
    if (w == 0.0) continue;
    const std::vector<double>& dist = probs_per_step[j - 1];
    TokenId target = seq.ids[j];
    if (target < 0 || static_cast<std::size_t>(target) >= dist.size())
      throw std::invalid_argument("weighted_nll: target id outside distribution");
    double p = dist[static_cast<std::size_t>(target)];
    if (!(p > 0.0))
      throw std::domain_error("weighted_nll: zero probability at weighted target "
                              "(infinite loss)");
    loss -= w * std::log(p);
  }
  return loss;
}

/// Keep the smallest set of highest-probability tokens whose cumulative mass
/// reaches p (ties broken toward lower token id), renormalize, zero the rest.
inline std::vector<double> nucleus_filter(std::vector<double> dist, double p) {
  if (!(p > 0.0 && p <= 1.0))
    throw std::invalid_argument("nucleus_filter: p must be in (0,1]");
  std::vector<std::size_t> order(dist.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (dist[a] != dist[b]) return dist[a] > dist[b];
    return a < b;
  });
  double cum = 0.0;
  std::size_t keep = 0;
  for (; keep < order.size(); ++keep) {
    cum += dist[order[keep]];
    if (cum >= p) {
      ++keep;
      break;
    }
  }
  std::vector<double> out(dist.size(), 0.0);
  if (cum <= 0.0) return out;
  for (std::size_t i = 0; i < keep; ++i) {
    out[order[i]] = dist[order[i]] / cum;
  }
  return out;
}

/// Inverse-CDF draw from a normalized distribution.
inline std::size_t sample_categorical(std::span<const double> dist, Rng& rng) {
  double u = rng.uniform();
  double acc = 0.0;
  std::size_t last_positive = 0;
  bool seen = false;
  for (std::size_t i = 0; i < dist.size(); ++i) {
    if (dist[i] <= 0.0) continue;
    last_positive = i;
    seen = true;
    acc += dist[i];
    if (u < acc) return i;
  }
  if (!seen) throw std::invalid_argument("sample_categorical: empty distribution");
  return last_positive;  // guard against rounding shortfall
}

/// Contract for anything that predicts the next token: given an image, the
/// task, and the tokens so far, produce a normalized distribution over the
/// whole vocabulary.
class NextTokenEstimator {
 public:
  virtual ~NextTokenEstimator() = default;
  virtual std::vector<double> next(const ImageTensor& image, Task task,
                                   std::span<const TokenId> prefix) const = 0;
};

/// Count-based k-token-context estimator. Deterministic, so it serves as a
/// test oracle for the sampling and decoding pipeline; it ignores the image.
class NgramEstimator : public NextTokenEstimator {
 public:
  NgramEstimator(int context_len, int vocab_size, double smoothing = 0.0)
      : k_(context_len), vocab_(vocab_size), smoothing_(smoothing) {
    if (context_len < 1)
      throw std::invalid_argument("ngram: context length must be >= 1");
    if (vocab_size < 1) throw std::invalid_argument("ngram: empty vocabulary");
  }

  void fit(Task task, std::span<const TokenId> sequence) {
    for (std::size_t j = 1; j < sequence.size(); ++j) {
      auto& slot = counts_[key_for(task, sequence.subspan(0, j))];
      slot.per_token[sequence[j]] += 1.0;
      slot.total += 1.0;
    }
  }

  std::vector<double> next(const ImageTensor&, Task task,
                           std::span<const TokenId> prefix) const override {
    std::vector<double> dist(static_cast<std::size_t>(vocab_), 0.0);
    auto it = counts_.find(key_for(task, prefix));
    double total = it != counts_.end() ? it->second.total : 0.0;
    double denom = total + smoothing_ * vocab_;
    if (denom <= 0.0) {
      double u = 1.0 / vocab_;
      for (double& d : dist) d = u;  // unseen context, no smoothing
      return dist;
    }
    for (double& d : dist) d = smoothing_ / denom;
    if (it != counts_.end()) {
      for (const auto& [tok, cnt] : it->second.per_token) {
        dist[static_cast<std::size_t>(tok)] += cnt / denom;
      }
    }
    return dist;
  }

 private:
  struct Slot {
    std::unordered_map<TokenId, double> per_token;
    double total = 0.0;
  };

  std::string key_for(Task task, std::span<const TokenId> prefix) const {
    std::string key;
    key.push_back(static_cast<char>('0' + static_cast<int>(task)));
    std::size_t n = prefix.size();
    for (int i = k_; i > 0; --i) {
      TokenId id = (n >= static_cast<std::size_t>(i)) ? prefix[n - i] : -1;
      key.append(reinterpret_cast<const char*>(&id), sizeof(id));
    }
    return key;
  }

  int k_;
  int vocab_;
  double smoothing_;
  std::unordered_map<std::string, Slot> counts_;
};

struct SamplerConfig {
  double nucleus_p = 1.0;
  std::size_t max_len = 512;  // generated tokens, excluding the prompt
};

/// Legal next-token set by task and body position. Keypoint generation masks
/// the occlusion token entirely so the model must commit to its best
/// coordinate guess.
inline std::vector<std::uint8_t> grammar_mask(Task task, std::size_t body_pos,
                                              const Vocabulary& v) {
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(v.total_size()), 0);
  auto allow = [&](TokenKind kind) {
    for (const Vocabulary::Range& r : v.ranges()) {
      if (r.kind != kind) continue;
      for (TokenId id = r.begin; id < r.end; ++id) {
        mask[static_cast<std::size_t>(id)] = 1;
      }
    }
  };
  switch (task) {
    case Task::Detect:
      if (body_pos % 5 == 4) {
        allow(TokenKind::ClassLabel);
        allow(TokenKind::NoiseClass);
      } else {
        allow(TokenKind::CoordBin);
        if (body_pos % 5 == 0) allow(TokenKind::Eos);
      }
      break;
    case Task::Segment:
      allow(TokenKind::CoordBin);
      allow(TokenKind::Separator);
      allow(TokenKind::Eos);
      break;
    case Task::Keypoint: {
      std::size_t span = 2 * static_cast<std::size_t>(v.config().keypoint_count);
      if (body_pos < span) {
        allow(TokenKind::CoordBin);
      } else {
        allow(TokenKind::Eos);
      }
      break;
    }
    case Task::Caption:
      allow(TokenKind::TextToken);
      allow(TokenKind::Eos);
      break;
  }
  return mask;
}

struct GenerationResult {
  std::vector<TokenId> ids;    // generated suffix, including eos if reached
  std::vector<double> probs;   // estimator probability of each sampled token
};

/// Autoregressive nucleus sampling under the task grammar. Stops at eos or
/// after cfg.max_len generated tokens. The recorded per-step probability is
/// the estimator's own (pre-masking) probability of the sampled token, which
/// detection decoding uses as the instance score.
inline GenerationResult generate(const NextTokenEstimator& est,
                                 const ImageTensor& image, const TaskPrompt& prompt,
                                 const Vocabulary& v, const SamplerConfig& cfg,
                                 Rng& rng) {
  std::vector<TokenId> prefix = prompt_tokens(prompt, v);
  std::size_t vocab = static_cast<std::size_t>(v.total_size());
  GenerationResult result;
  for (std::size_t step = 0; step < cfg.max_len; ++step) {
    std::vector<double> dist = est.next(image, prompt.task, prefix);
    if (dist.size() != vocab)
      throw std::runtime_error("generate: estimator distribution has wrong size");
    double sum = std::accumulate(dist.begin(), dist.end(), 0.0);
    if (std::abs(sum - 1.0) > 1e-6)
      throw std::runtime_error("generate: estimator returned unnormalized output");
    std::vector<std::uint8_t> mask = grammar_mask(prompt.task, step, v);
    std::vector<double> masked(vocab, 0.0);
    double legal = 0.0;
    for (std::size_t i = 0; i < vocab; ++i) {
      if (mask[i]) {
        masked[i] = dist[i];
        legal += dist[i];
      }
    }
    if (legal > 0.0) {
      for (double& d : masked) d /= legal;
    } else {
      // Estimator puts no mass on any legal token; fall back to uniform.
      std::size_t n_legal = 0;
      for (std::uint8_t m : mask) n_legal += m;
      for (std::size_t i = 0; i < vocab; ++i) {
        masked[i] = mask[i] ? 1.0 / n_legal : 0.0;
      }
    }
    std::vector<double> filtered = nucleus_filter(std::move(masked), cfg.nucleus_p);
    TokenId tok = static_cast<TokenId>(sample_categorical(filtered, rng));
    result.ids.push_back(tok);
    result.probs.push_back(dist[static_cast<std::size_t>(tok)]);
    prefix.push_back(tok);
    if (v.classify(tok) == TokenKind::Eos) break;
  }
  return result;
}

/// Run generate over many prompts concurrently against a read-only
/// estimator. Per-prompt rng streams are forked up front, so the outputs are
/// bit-identical to a sequential loop.
inline std::vector<GenerationResult> generate_parallel(
    const NextTokenEstimator& est, const ImageTensor& image,
    std::span<const TaskPrompt> prompts, const Vocabulary& v,
    const SamplerConfig& cfg, const Rng& rng) {
  if (prompts.empty())
    throw std::invalid_argument("generate_parallel: no prompts");
  std::vector<std::future<GenerationResult>> futures;
  futures.reserve(prompts.size());
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    futures.push_back(std::async(std::launch::async, [&, i]() {
      Rng local = rng.fork(i);
      return generate(est, image, prompts[i], v, cfg, local);
    }));
  }
  std::vector<GenerationResult> results;
  results.reserve(prompts.size());
  std::exception_ptr first_error;
  for (auto& f : futures) {
    try {
      results.push_back(f.get());
    } catch (...) {
      if (!first_error) first_error = std::current_exception();
      results.emplace_back();
    }
  }
  if (first_error) std::rethrow_exception(first_error);
  return results;
}

}  // namespace seqvis
