// Acceptance suite: every release criterion as one named check with pinned
// tolerances. Prints one [PASS]/[FAIL] line per criterion; exit code is the
// failure count. Run a single criterion by name, e.g. `acceptance nucleus-sampling`.
//
// The cli-determinism criterion drives the real binary; its path comes from
// --cli PATH or the SEQVIS_CLI environment variable.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "seqvis/seqvis.hpp"

namespace fs = std::filesystem;
using namespace seqvis;
using Clock = std::chrono::steady_clock;

namespace {

struct Failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require(bool cond, const std::string& what) {
  if (!cond) throw Failure(what);
}

void require_near(double actual, double expected, double tol, const std::string& what) {
  if (!(std::abs(actual - expected) <= tol)) {
    std::ostringstream msg;
    msg << what << ": got " << actual << ", want " << expected << " +/- " << tol;
    throw Failure(msg.str());
  }
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// quantization
// ---------------------------------------------------------------------------

void check_quantization() {
  auto t0 = Clock::now();
  const int n = 1000;
  const double bound = 5e-4;
  Rng rng(1);
  std::vector<double> samples(1000000);
  for (double& v : samples) v = rng.uniform();
  for (double v : samples) {
    double rt = dequantize(quantize(v, n), n);
    require(std::abs(v - rt) <= bound, "round-trip error above 5e-4");
  }
  std::sort(samples.begin(), samples.end());
  int prev = 0;
  for (double v : samples) {
    int b = quantize(v, n);
    require(b >= prev, "quantize not monotone on sorted samples");
    prev = b;
  }
  double elapsed = seconds_since(t0);
  require(elapsed < 5.0, "runtime budget exceeded");
  std::printf("  1e6 samples, max error <= 5e-4, monotone, %.2fs\n", elapsed);
}

// ---------------------------------------------------------------------------
// codec-round-trips
// ---------------------------------------------------------------------------

void check_codec_round_trips() {
  auto t0 = Clock::now();
  Vocabulary v = build_vocabulary({1000, 80, 256, 14});
  Rng rng(2);
  const int scenes = 1000;

  // Detection: boxes within 5e-4 per coordinate, classes exact.
  for (int s = 0; s < scenes; ++s) {
    std::vector<InstanceAnnotation> insts;
    std::size_t n = rng.uniform_index(8);
    for (std::size_t i = 0; i < n; ++i) {
      double y0 = rng.uniform(), y1 = rng.uniform();
      double x0 = rng.uniform(), x1 = rng.uniform();
      InstanceAnnotation inst;
      inst.bbox = BBox{std::min(y0, y1), std::min(x0, x1), std::max(y0, y1),
                       std::max(x0, x1)};
      inst.class_id = static_cast<int>(rng.uniform_index(80));
      insts.push_back(inst);
    }
    TokenSequence seq = encode_detection(insts, v, rng);
    std::vector<TokenId> body(seq.ids.begin() + 1, seq.ids.end());
    DecodedDetection det = decode_detection(body, nullptr, v);
    require(det.size() == insts.size(), "detection round-trip lost instances");
    std::multiset<std::tuple<int, int, int, int, int>> want, got;
    for (const auto& inst : insts) {
      want.insert({inst.class_id, quantize(inst.bbox.ymin, 1000),
                   quantize(inst.bbox.xmin, 1000), quantize(inst.bbox.ymax, 1000),
                   quantize(inst.bbox.xmax, 1000)});
    }
    for (const auto& d : det) {
      got.insert({d.class_id, quantize(d.box.ymin, 1000), quantize(d.box.xmin, 1000),
                  quantize(d.box.ymax, 1000), quantize(d.box.xmax, 1000)});
    }
    require(want == got, "detection classes/bins mismatch");
  }

  // Keypoints: 5e-4 coordinates, exact occlusion pattern.
  for (int s = 0; s < scenes; ++s) {
    InstanceAnnotation inst;
    inst.bbox = BBox{0, 0, 1, 1};
    KeypointSet kps;
    for (int k = 0; k < 14; ++k) {
      if (rng.uniform() < 0.25) {
        kps.points.push_back(occluded_keypoint());
      } else {
        kps.points.push_back(Keypoint{rng.uniform(), rng.uniform(), false});
      }
    }
    inst.keypoints = kps;
    TokenSequence seq = encode_keypoints(inst, v);
    std::vector<TokenId> body(seq.ids.begin() + 5, seq.ids.end());
    KeypointSet back = decode_keypoints(body, v);
    for (int k = 0; k < 14; ++k) {
      require(back.points[k].occluded == kps.points[k].occluded,
              "occlusion pattern mismatch");
      if (!kps.points[k].occluded) {
        require(std::abs(back.points[k].y - kps.points[k].y) <= 5e-4 &&
                    std::abs(back.points[k].x - kps.points[k].x) <= 5e-4,
                "keypoint coordinate error above 5e-4");
      }
    }
  }

  // Captions: byte-exact.
  CodecConfig codec;
  for (int s = 0; s < scenes; ++s) {
    std::size_t len = 1 + rng.uniform_index(80);
    std::string text;
    for (std::size_t i = 0; i < len; ++i) {
      text.push_back(static_cast<char>(rng.uniform_index(256)));
    }
    TokenSequence seq = encode_caption(text, v, codec);
    std::vector<TokenId> body(seq.ids.begin() + 1, seq.ids.end());
    require(decode_caption(body, v) == text, "caption round-trip not byte-exact");
  }

  // Segmentation: mask IoU >= 0.99 at 64x64 without vertex downsampling.
  // Scenes are star-convex instance outlines (many short segments, like real
  // mask polygons). Long perfectly straight edges are excluded on purpose: a
  // half-bin vertex shift can land such an edge on a pixel-center line (or a
  // low-denominator rational slope) and flip pixels along its whole length,
  // which measures grid resonance rather than codec fidelity.
  Rng blob_rng(77);
  auto random_outline = [&blob_rng]() {
    std::size_t nverts = 20 + blob_rng.uniform_index(9);
    double base = blob_rng.uniform(0.28, 0.38);
    double cy = blob_rng.uniform(1.1 * base + 0.02, 1.0 - 1.1 * base - 0.02);
    double cx = blob_rng.uniform(1.1 * base + 0.02, 1.0 - 1.1 * base - 0.02);
    double phase = blob_rng.uniform(0.0, 6.283185307179586);
    Polygon poly;
    for (std::size_t i = 0; i < nverts; ++i) {
      double a = phase + 6.283185307179586 * i / nverts;
      double r = base * (0.9 + 0.2 * blob_rng.uniform());
      poly.vertices.push_back(Point{cy + r * std::sin(a), cx + r * std::cos(a)});
    }
    return poly;
  };
  double min_iou = 1.0;
  for (int s = 0; s < scenes; ++s) {
    InstanceAnnotation inst;
    inst.polygons = {random_outline()};
    BBox box{1, 1, 0, 0};
    for (const Point& p : inst.polygons[0].vertices) {
      box.ymin = std::min(box.ymin, p.y);
      box.xmin = std::min(box.xmin, p.x);
      box.ymax = std::max(box.ymax, p.y);
      box.xmax = std::max(box.xmax, p.x);
    }
    inst.bbox = box;
    TokenSequence seq = encode_segmentation(inst, v, rng);
    std::vector<TokenId> body(seq.ids.begin() + 5, seq.ids.end());
    BinaryMask decoded = decode_segmentation_sample(body, v, 64, 64);
    BinaryMask original = rasterize(inst.polygons, 64, 64);
    double iou = mask_iou(decoded, original);
    min_iou = std::min(min_iou, iou);
    require(iou >= 0.99, "segmentation round-trip IoU below 0.99");
  }

  double elapsed = seconds_since(t0);
  require(elapsed < 60.0, "runtime budget exceeded");
  std::printf("  1000 scenes/task; min segmentation IoU %.4f, %.1fs\n", min_iou,
              elapsed);
}

// ---------------------------------------------------------------------------
// mask-voting
// ---------------------------------------------------------------------------

void check_mask_voting() {
  Rng rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<BinaryMask> stack(8, BinaryMask(16, 16));
    for (auto& m : stack) {
      for (auto& b : m.bits) b = rng.uniform() < 0.5 ? 1 : 0;
    }
    BinaryMask voted = vote_masks(stack);
    for (std::size_t i = 0; i < voted.bits.size(); ++i) {
      std::size_t on = 0;
      for (const auto& m : stack) on += m.bits[i];
      bool expected = 2 * on > stack.size();
      require((voted.bits[i] != 0) == expected, "vote differs from brute force");
    }
  }
  // The 50% threshold rule: 5 of 8 on, 4 of 8 off.
  std::vector<BinaryMask> stack(8, BinaryMask(1, 1));
  for (int i = 0; i < 5; ++i) stack[static_cast<std::size_t>(i)].set(0, 0, true);
  require(vote_masks(stack).at(0, 0), "5 of 8 must be on");
  stack[4].set(0, 0, false);
  require(!vote_masks(stack).at(0, 0), "4 of 8 must be off");
  std::printf("  500 stacks of 8 at 16x16 bit-exact; 5/8 on, 4/8 off\n");
}

// ---------------------------------------------------------------------------
// weighted-objective
// ---------------------------------------------------------------------------

void check_weighted_objective() {
  // Four-token sequence, hand-computed value.
  TokenSequence seq;
  seq.ids = {2, 0, 1, 2};
  seq.weights = {0.0, 0.5, 1.0, 0.1};
  seq.prompt_len = 1;
  std::vector<std::vector<double>> dists = {
      {0.4, 0.35, 0.25}, {0.5, 0.2, 0.3}, {0.1, 0.2, 0.7}};
  double hand = -(0.5 * std::log(0.4) + 1.0 * std::log(0.2) + 0.1 * std::log(0.7));
  require_near(weighted_nll(dists, seq), hand, 1e-12, "hand-computed objective");

  // Arbitrary perturbation at the prompt position leaves the loss unchanged.
  double base = weighted_nll(dists, seq);
  TokenSequence longer;
  longer.ids = {2, 1, 0, 1};
  longer.weights = {0.0, 0.0, 1.0, 1.0};
  longer.prompt_len = 2;
  std::vector<std::vector<double>> da = {
      {0.4, 0.35, 0.25}, {0.5, 0.2, 0.3}, {0.1, 0.2, 0.7}};
  std::vector<std::vector<double>> db = {
      {0.01, 0.01, 0.98}, {0.5, 0.2, 0.3}, {0.1, 0.2, 0.7}};
  require(weighted_nll(da, longer) == weighted_nll(db, longer),
          "loss changed under prompt-position perturbation");
  (void)base;
  std::printf("  4-token hand value to 1e-12; prompt positions inert\n");
}

// ---------------------------------------------------------------------------
// gradient-check
// ---------------------------------------------------------------------------

void check_gradient_check() {
  auto t0 = Clock::now();
  ModelConfig cfg;
  cfg.image_size = 4;
  cfg.patch_size = 2;
  cfg.channels = 1;
  cfg.width = 4;
  cfg.heads = 1;
  cfg.enc_blocks = 1;
  cfg.dec_blocks = 1;
  cfg.ff_mult = 1;
  cfg.vocab_size = 12;
  cfg.max_seq_len = 6;
  Rng rng(4);
  ModelParams params = init_params(cfg, rng, 0.05);
  require(param_count(params) <= 500, "reference model exceeds 500 parameters");
  TrainingBatch batch;
  batch.gradient_weight = 0.7;
  for (int i = 0; i < 2; ++i) {
    TrainExample ex;
    ex.image = ImageTensor(4, 4, 1);
    for (float& p : ex.image.data) p = static_cast<float>(rng.uniform());
    ex.seq.ids = {1, 4, 9, 2, 7};
    ex.seq.weights = {0, 1, 0.1, 1, 1};
    ex.seq.prompt_len = 1;
    batch.examples.push_back(std::move(ex));
  }
  double max_rel = check_gradients(params, batch, 1e-5);
  double elapsed = seconds_since(t0);
  require(max_rel <= 1e-4, "gradient mismatch above 1e-4");
  require(elapsed < 30.0, "runtime budget exceeded");
  std::printf("  %zu params, max relative error %.2e, %.1fs\n", param_count(params),
              max_rel, elapsed);
}

// ---------------------------------------------------------------------------
// nucleus-sampling
// ---------------------------------------------------------------------------

void check_nucleus_sampling() {
  std::vector<double> filtered = nucleus_filter({0.5, 0.3, 0.15, 0.05}, 0.8);
  require_near(filtered[0], 0.625, 1e-12, "nucleus renormalization");
  require_near(filtered[1], 0.375, 1e-12, "nucleus renormalization");
  require(filtered[2] == 0.0 && filtered[3] == 0.0, "nucleus must zero the tail");

  // Empirical frequencies through the full generation path.
  Vocabulary v = build_vocabulary({2, 1, 4, 1});
  std::vector<double> dist(static_cast<std::size_t>(v.total_size()), 0.0);
  TokenId base = v.text_base();
  std::vector<double> weights = {0.5, 0.3, 0.15, 0.05};
  for (int i = 0; i < 4; ++i) {
    dist[static_cast<std::size_t>(base + i)] = weights[static_cast<std::size_t>(i)];
  }
  class Fixed : public NextTokenEstimator {
   public:
    explicit Fixed(std::vector<double> d) : d_(std::move(d)) {}
    std::vector<double> next(const ImageTensor&, Task,
                             std::span<const TokenId>) const override {
      return d_;
    }
    std::vector<double> d_;
  } est(dist);
  ImageTensor img(1, 1, 1);
  SamplerConfig cfg;
  cfg.nucleus_p = 0.8;
  cfg.max_len = 1;
  Rng rng(2024);
  const int draws = 10000;
  std::vector<int> counts(4, 0);
  for (int i = 0; i < draws; ++i) {
    GenerationResult out = generate(est, img, TaskPrompt::caption(), v, cfg, rng);
    ++counts[static_cast<std::size_t>(out.ids[0] - base)];
  }
  std::vector<double> expected = {0.625, 0.375, 0.0, 0.0};
  for (int i = 0; i < 4; ++i) {
    double p = expected[static_cast<std::size_t>(i)];
    double freq = counts[static_cast<std::size_t>(i)] / double(draws);
    double se = std::sqrt(p * (1.0 - p) / draws);
    require(std::abs(freq - p) <= 3.0 * se,
            "sampled frequency outside 3 standard errors");
  }
  require(counts[2] == 0 && counts[3] == 0, "token outside the nucleus was sampled");
  std::printf("  freq (%.4f, %.4f, 0, 0) vs (0.625, 0.375, 0, 0) over 1e4 draws\n",
              counts[0] / double(draws), counts[1] / double(draws));
}

// ---------------------------------------------------------------------------
// task-mixing
// ---------------------------------------------------------------------------

void check_task_mixing() {
  // Frequencies under the reference four-task weighting.
  SyntheticConfig dcfg;
  dcfg.image_size = 16;
  dcfg.min_shape_size = 0.3;
  dcfg.max_shape_size = 0.6;
  Vocabulary v = build_vocabulary({100, 3, 128, 3});
  TaskMixConfig mix;
  mix.strategy = MixStrategy::BatchMix;
  // Weighting order: detection, segmentation, captioning, keypoints.
  std::vector<std::pair<Task, double>> weighting = {{Task::Detect, 0.1782},
                                                    {Task::Segment, 0.7128},
                                                    {Task::Caption, 0.099},
                                                    {Task::Keypoint, 0.01}};
  require(std::abs(0.1782 + 0.7128 + 0.099 + 0.01 - 1.0) <= 1e-4,
          "reference weights must sum to 1 within 1e-4");
  for (std::size_t i = 0; i < weighting.size(); ++i) {
    TaskSource src;
    src.task = weighting[i].first;
    src.weight = weighting[i].second;
    dcfg.seed = 300 + i;
    src.scenes = generate_synthetic(dcfg, 4);
    mix.tasks.push_back(std::move(src));
  }
  // Keypoint units need triangles; extend until one exists.
  {
    auto& kp = mix.tasks[3];
    std::uint64_t seed = 400;
    auto has_kp = [&]() {
      for (const auto& s : kp.scenes) {
        for (const auto& inst : s.instances) {
          if (inst.keypoints) return true;
        }
      }
      return false;
    };
    while (!has_kp()) {
      dcfg.seed = seed++;
      kp.scenes = generate_synthetic(dcfg, 4);
    }
  }
  Rng rng(5);
  std::map<Task, int> counts;
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) {
    TrainingBatch batch = next_batch_batchmix(mix, v, CodecConfig{}, 1, 16, rng);
    ++counts[*batch.task];
  }
  for (const auto& [task, weight] : weighting) {
    double freq = counts[task] / double(draws);
    require(std::abs(freq - weight) <= 0.01,
            std::string("frequency off by more than 1% for ") +
                std::string(task_tag(task)));
  }

  // Greedy weight step: rescaling preserves ratios exactly.
  TaskMixConfig existing;
  existing.strategy = MixStrategy::BatchMix;
  for (auto [task, w] : {std::pair{Task::Detect, 0.18}, {Task::Segment, 0.72},
                         {Task::Caption, 0.10}}) {
    TaskSource src;
    src.task = task;
    src.weight = w;
    existing.tasks.push_back(std::move(src));
  }
  TaskSource kp;
  kp.task = Task::Keypoint;
  TaskMixConfig stepped =
      greedy_weight_step(existing, kp, std::vector<double>{0.1})[0];
  require_near(stepped.tasks[0].weight, 0.162, 1e-15, "rescaled detect weight");
  require_near(stepped.tasks[1].weight, 0.648, 1e-15, "rescaled segment weight");
  require_near(stepped.tasks[2].weight, 0.09, 1e-15, "rescaled caption weight");
  require(stepped.tasks[3].weight == 0.1, "new task weight");
  require(std::abs(stepped.weight_sum() - 1.0) <= 1e-12, "weights must sum to 1");
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      require(stepped.tasks[i].weight * existing.tasks[j].weight ==
                  stepped.tasks[j].weight * existing.tasks[i].weight,
              "pairwise ratio not preserved exactly");
    }
  }
  std::printf("  1e5 draws within 1%% of (0.1782, 0.7128, 0.099, 0.01); "
              "greedy rescale exact\n");
}

// ---------------------------------------------------------------------------
// constrained-generation
// ---------------------------------------------------------------------------

void check_constrained_generation() {
  Vocabulary v = build_vocabulary({100, 5, 128, 2});
  ImageTensor img(1, 1, 1);
  CodecConfig codec;
  Rng enc_rng(3);

  InstanceAnnotation inst;
  inst.bbox = BBox{0.2, 0.3, 0.8, 0.9};
  inst.class_id = 2;
  inst.polygons = {Polygon{{{0.2, 0.3}, {0.2, 0.9}, {0.8, 0.3}}}};
  inst.keypoints =
      KeypointSet{{Keypoint{0.25, 0.5, false}, Keypoint{0.75, 0.5, false}}};
  std::vector<InstanceAnnotation> insts = {inst};

  struct Case {
    Task task;
    TokenSequence seq;
    TaskPrompt prompt;
  };
  std::vector<Case> cases;
  cases.push_back({Task::Detect, encode_detection(insts, v, enc_rng, codec),
                   TaskPrompt::detect()});
  cases.push_back({Task::Segment, encode_segmentation(inst, v, enc_rng, codec),
                   TaskPrompt::segment(inst.bbox)});
  cases.push_back({Task::Keypoint, encode_keypoints(inst, v, codec),
                   TaskPrompt::keypoint(inst.bbox)});
  cases.push_back({Task::Caption, encode_caption("a tall red triangle", v, codec),
                   TaskPrompt::caption()});
  for (const Case& c : cases) {
    NgramEstimator est(4, v.total_size(), 0.0);
    est.fit(c.task, c.seq.ids);
    SamplerConfig cfg;
    cfg.nucleus_p = 1.0;
    cfg.max_len = 64;
    Rng rng(11);
    GenerationResult out = generate(est, img, c.prompt, v, cfg, rng);
    std::vector<TokenId> body(
        c.seq.ids.begin() + static_cast<std::ptrdiff_t>(c.seq.prompt_len),
        c.seq.ids.end());
    require(out.ids == body, std::string("regeneration mismatch for ") +
                                 std::string(task_tag(c.task)));
  }

  // Keypoint generations never contain the occlusion token and always decode.
  std::vector<double> inv_heavy(static_cast<std::size_t>(v.total_size()), 0.0);
  inv_heavy[static_cast<std::size_t>(v.invisible())] = 0.9;
  double rest = 0.1 / (inv_heavy.size() - 1);
  for (std::size_t i = 0; i < inv_heavy.size(); ++i) {
    if (i != static_cast<std::size_t>(v.invisible())) inv_heavy[i] = rest;
  }
  class Fixed : public NextTokenEstimator {
   public:
    explicit Fixed(std::vector<double> d) : d_(std::move(d)) {}
    std::vector<double> next(const ImageTensor&, Task,
                             std::span<const TokenId>) const override {
      return d_;
    }
    std::vector<double> d_;
  } est(inv_heavy);
  SamplerConfig cfg;
  cfg.nucleus_p = 0.95;
  cfg.max_len = 16;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    GenerationResult out =
        generate(est, img, TaskPrompt::keypoint(BBox{0.1, 0.1, 0.9, 0.9}), v, cfg, rng);
    for (TokenId id : out.ids) {
      require(v.classify(id) != TokenKind::Invisible,
              "occlusion token emitted at inference");
    }
    KeypointSet kps = decode_keypoints(out.ids, v);  // must not throw
    require(kps.points.size() == 2, "keypoint decode arity");
  }
  std::printf("  all four tasks regenerate exactly at p=1; keypoint suffixes "
              "always decode\n");
}

// ---------------------------------------------------------------------------
// metric-oracles
// ---------------------------------------------------------------------------

void check_metric_oracles() {
  BBox gt{0.2, 0.2, 0.6, 0.6};
  BBox close{0.2, 0.2, 0.6, 0.56};
  BBox far{0.7, 0.7, 0.9, 0.9};
  auto run = [&](const std::vector<std::pair<BBox, double>>& preds) {
    std::vector<double> scores;
    for (const auto& [b, s] : preds) scores.push_back(s);
    std::vector<MatchResult> matches = {match_greedy(
        scores, 1,
        [&](std::size_t p, std::size_t) { return box_iou(preds[p].first, gt); },
        0.5)};
    return average_precision(matches);
  };
  require(run({{close, 0.9}}) == 1.0, "single hit must give AP 1.0");
  require(run({{far, 0.9}}) == 0.0, "single miss must give AP 0.0");
  require(run({{close, 0.9}, {far, 0.8}}) == 1.0, "hit-first must give AP 1.0");
  require(run({{far, 0.9}, {close, 0.8}}) == 0.5, "miss-first must give AP 0.5");

  // OKS: keypoint displaced by d with d^2 = 2 s^2 kappa^2 scores e^-1.
  BBox box{0.25, 0.25, 0.75, 0.75};
  double kappa = 0.1;
  double d = std::sqrt(2.0 * box.area() * kappa * kappa);
  KeypointSet kp_gt{{Keypoint{0.5, 0.5, false}}};
  KeypointSet kp_pred{{Keypoint{0.5, 0.5 + d, false}}};
  require_near(oks(kp_pred, kp_gt, box, OksConfig::uniform(1, kappa)),
               std::exp(-1.0), 1e-9, "OKS falloff");

  // BLEU: "the cat sat" vs "the cat sat down" at max_n = 2.
  std::vector<std::string> refs = {"the cat sat down"};
  require_near(bleu("the cat sat", refs, 2), std::exp(1.0 - 4.0 / 3.0), 1e-6,
               "BLEU hand value");
  std::printf("  AP 1.0/0.0/0.5 exact; OKS e^-1 to 1e-9; BLEU to 1e-6\n");
}

// ---------------------------------------------------------------------------
// toy-end-to-end
// ---------------------------------------------------------------------------

double detection_ap(const ModelParams& params, const Vocabulary& vocab,
                    std::span<const SceneAnnotation> scenes) {
  TransformerEstimator est(params);
  SamplerConfig scfg;
  scfg.nucleus_p = 0.05;  // effectively greedy once the model is confident
  scfg.max_len = 11;
  Rng root(999);
  std::vector<MatchResult> matches;
  for (std::size_t si = 0; si < scenes.size(); ++si) {
    const SceneAnnotation& scene = scenes[si];
    ImageTensor image = scene_pixels(scene, 64);
    Rng rng = root.fork(si);
    GenerationResult gen =
        generate(est, image, TaskPrompt::detect(), vocab, scfg, rng);
    DecodedDetection det = decode_detection(gen.ids, &gen.probs, vocab);
    std::vector<double> scores;
    for (const auto& b : det) scores.push_back(b.score);
    matches.push_back(match_greedy(
        scores, scene.instances.size(),
        [&](std::size_t p, std::size_t g) {
          if (det[p].class_id != scene.instances[g].class_id) return 0.0;
          return box_iou(det[p].box, scene.instances[g].bbox);
        },
        0.5));
  }
  return average_precision(matches);
}

std::vector<TrainExample> probe_examples(std::span<const SceneAnnotation> scenes,
                                         Task task, const Vocabulary& vocab,
                                         const CodecConfig& codec, std::size_t n) {
  std::vector<TrainExample> out;
  Rng rng(1234);
  for (std::size_t i = 0; i < scenes.size() && out.size() < n; ++i) {
    TrainExample ex;
    ex.image = scene_pixels(scenes[i], 64);
    if (task == Task::Detect) {
      ex.seq = encode_detection(scenes[i].instances, vocab, rng, codec);
    } else {
      if (scenes[i].captions.empty()) continue;
      ex.seq = encode_caption(scenes[i].captions[0], vocab, codec);
    }
    out.push_back(std::move(ex));
  }
  return out;
}

void check_toy_end_to_end() {
  Vocabulary vocab = build_vocabulary({100, 3, 128, 3});
  ModelConfig mcfg;
  mcfg.image_size = 64;
  mcfg.patch_size = 8;
  mcfg.channels = 3;
  mcfg.width = 64;
  mcfg.heads = 4;
  mcfg.enc_blocks = 2;
  mcfg.dec_blocks = 2;
  mcfg.ff_mult = 2;
  mcfg.vocab_size = vocab.total_size();

  TrainOptions topt;
  topt.optimizer = OptimizerKind::Momentum;
  topt.lr = 0.03;
  topt.momentum = 0.9;
  topt.clip_norm = 1.0;

  // Detection-only: 2000 train / 200 held-out single-shape scenes.
  SyntheticConfig dcfg;
  dcfg.image_size = 64;
  dcfg.min_shapes = 1;
  dcfg.max_shapes = 1;
  dcfg.min_shape_size = 0.3;
  dcfg.max_shape_size = 0.7;
  dcfg.seed = 42;
  auto all = generate_synthetic(dcfg, 2200);
  std::vector<SceneAnnotation> train(all.begin(), all.begin() + 2000);
  std::vector<SceneAnnotation> held(all.begin() + 2000, all.end());

  mcfg.max_seq_len = 16;
  CodecConfig codec;
  codec.max_seq_len = 16;
  Rng rng(7);
  Trainer trainer(init_params(mcfg, rng), topt);

  double ap_untrained = detection_ap(trainer.params(), vocab, held);
  require(ap_untrained <= 0.05, "untrained model scored above 0.05 AP");

  TaskMixConfig mix;
  mix.strategy = MixStrategy::BatchMix;
  TaskSource src;
  src.task = Task::Detect;
  src.weight = 1.0;
  src.scenes = std::move(train);
  mix.tasks.push_back(std::move(src));

  auto t0 = Clock::now();
  const int steps = 10000;
  for (int s = 0; s < steps; ++s) {
    TrainingBatch batch = next_batch_batchmix(mix, vocab, codec, 8, 64, rng);
    trainer.step(batch);
  }
  double train_s = seconds_since(t0);
  require(train_s <= 600.0, "detection training exceeded 10 minutes");
  double ap_trained = detection_ap(trainer.params(), vocab, held);
  require(ap_trained >= 0.5, "trained model below 0.5 AP at IoU 0.5");
  std::printf("  detection: AP %.3f trained (%.0fs, %d steps) vs %.4f untrained\n",
              ap_trained, train_s, steps, ap_untrained);

  // Multi-task detect+caption: both losses halve from step 0.
  SyntheticConfig mcfg2 = dcfg;
  mcfg2.seed = 52;
  auto scenes2 = generate_synthetic(mcfg2, 2000);
  ModelConfig model2 = mcfg;
  model2.max_seq_len = 32;
  CodecConfig codec2;
  codec2.max_seq_len = 32;
  Rng rng2(7);
  Trainer trainer2(init_params(model2, rng2), topt);

  TaskMixConfig mix2;
  mix2.strategy = MixStrategy::BatchMix;
  TaskSource det;
  det.task = Task::Detect;
  det.weight = 0.64;
  det.scenes = scenes2;
  TaskSource cap;
  cap.task = Task::Caption;
  cap.weight = 0.36;
  cap.scenes = scenes2;
  mix2.tasks = {det, cap};

  auto det_probe = probe_examples(scenes2, Task::Detect, vocab, codec2, 32);
  auto cap_probe = probe_examples(scenes2, Task::Caption, vocab, codec2, 32);
  double det0 = mean_loss(trainer2.params(), det_probe);
  double cap0 = mean_loss(trainer2.params(), cap_probe);

  t0 = Clock::now();
  const int steps2 = 8000;
  for (int s = 0; s < steps2; ++s) {
    TrainingBatch batch = next_batch_batchmix(mix2, vocab, codec2, 8, 64, rng2);
    trainer2.step(batch);
  }
  double train2_s = seconds_since(t0);
  require(train2_s <= 600.0, "multi-task training exceeded 10 minutes");
  double detN = mean_loss(trainer2.params(), det_probe);
  double capN = mean_loss(trainer2.params(), cap_probe);
  require(detN <= 0.5 * det0, "detection loss did not halve under the mix");
  require(capN <= 0.5 * cap0, "caption loss did not halve under the mix");
  std::printf("  multi-task: detect %.1f%% and caption %.1f%% of step-0 loss "
              "(%.0fs, %d steps)\n",
              100.0 * detN / det0, 100.0 * capN / cap0, train2_s, steps2);
}

// ---------------------------------------------------------------------------
// cli-determinism
// ---------------------------------------------------------------------------

std::string g_cli_path;

int run_cli(const std::string& args) {
  std::string cmd = g_cli_path + " " + args + " > /dev/null 2>&1";
  return std::system(cmd.c_str());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  require(static_cast<bool>(in), "missing output file " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool dirs_identical(const fs::path& a, const fs::path& b) {
  std::vector<std::string> names_a, names_b;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (e.is_regular_file()) names_a.push_back(fs::relative(e.path(), a).string());
  }
  for (const auto& e : fs::recursive_directory_iterator(b)) {
    if (e.is_regular_file()) names_b.push_back(fs::relative(e.path(), b).string());
  }
  std::sort(names_a.begin(), names_a.end());
  std::sort(names_b.begin(), names_b.end());
  if (names_a != names_b) return false;
  for (const std::string& name : names_a) {
    if (slurp(a / name) != slurp(b / name)) return false;
  }
  return true;
}

void check_cli_determinism() {
  require(!g_cli_path.empty() && fs::exists(g_cli_path),
          "CLI binary not found; pass --cli PATH or set SEQVIS_CLI");
  fs::path dir = fs::temp_directory_path() / "seqvis_acceptance_cli";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::string cfg_path = (dir / "toy.cfg").string();
  {
    std::ofstream cfg(cfg_path);
    cfg << "vocab.bins = 100\nvocab.classes = 3\nvocab.text = 128\n"
           "vocab.keypoints = 3\nmodel.image_size = 32\nmodel.patch_size = 8\n"
           "model.width = 16\nmodel.heads = 2\nmodel.enc_blocks = 1\n"
           "model.dec_blocks = 1\nmodel.max_seq_len = 96\nmix.strategy = batchmix\n"
           "task.detect.weight = 1.0\ntask.detect.data = data.json\n"
           "train.lr = 0.01\ntrain.batch_size = 2\n";
  }
  auto path = [&](const std::string& s) { return (dir / s).string(); };
  require(run_cli("gen-data --out " + path("data.json") +
                  " --num 4 --image-size 32 --seed 3") == 0,
          "gen-data failed");
  require(run_cli("train --config " + cfg_path + " --steps 2 --seed 5 --out " +
                  path("run")) == 0,
          "train failed");

  struct Step {
    std::string name;
    std::string args_a;
    std::string args_b;
    bool is_dir;
    std::string out_a;
    std::string out_b;
  };
  std::vector<Step> steps;
  auto twice = [&](const std::string& name, const std::string& tmpl, bool is_dir) {
    std::string a = path(name + "_a"), b = path(name + "_b");
    auto fill = [&](const std::string& out) {
      std::string s = tmpl;
      std::string key = "{OUT}";
      for (std::size_t pos = s.find(key); pos != std::string::npos;
           pos = s.find(key)) {
        s.replace(pos, key.size(), out);
      }
      return s;
    };
    steps.push_back({name, fill(a), fill(b), is_dir, a, b});
  };
  twice("encode",
        "encode --config " + cfg_path + " --input " + path("data.json") +
            " --task detect --seed 11 --out {OUT}",
        true);
  twice("decode",
        "decode --config " + cfg_path + " --input " + path("encode_a") +
            "/sequences.txt --image-size 32 --out {OUT}",
        true);
  twice("sample",
        "sample --run " + path("run") + " --input " + path("data.json") +
            " --task segment --samples 4 --nucleus-p 0.8 --seed 12 --limit 2 "
            "--out {OUT}",
        true);
  twice("eval",
        "eval --run " + path("run") + " --input " + path("data.json") +
            " --task detect --seed 13 --limit 2 --out {OUT}",
        false);

  for (const Step& step : steps) {
    require(run_cli(step.args_a) == 0, step.name + " (first run) failed");
    require(run_cli(step.args_b) == 0, step.name + " (second run) failed");
    bool same = step.is_dir ? dirs_identical(step.out_a, step.out_b)
                            : slurp(step.out_a) == slurp(step.out_b);
    require(same, step.name + " output not byte-identical across runs");
  }
  fs::remove_all(dir);
  std::printf("  encode, decode, sample, eval byte-identical under fixed seeds\n");
}

// ---------------------------------------------------------------------------

struct Criterion {
  const char* name;
  void (*fn)();
};

const Criterion kCriteria[] = {
    {"quantization", check_quantization},
    {"codec-round-trips", check_codec_round_trips},
    {"mask-voting", check_mask_voting},
    {"weighted-objective", check_weighted_objective},
    {"gradient-check", check_gradient_check},
    {"nucleus-sampling", check_nucleus_sampling},
    {"task-mixing", check_task_mixing},
    {"constrained-generation", check_constrained_generation},
    {"metric-oracles", check_metric_oracles},
    {"toy-end-to-end", check_toy_end_to_end},
    {"cli-determinism", check_cli_determinism},
};

}  // namespace

int main(int argc, char** argv) {
  std::string filter;
  for (int i = 1; i < argc; ++i) {
    std::string arg = argv[i];
    if (arg == "--cli" && i + 1 < argc) {
      g_cli_path = argv[++i];
    } else {
      filter = arg;
    }
  }
  if (g_cli_path.empty()) {
    const char* env = std::getenv("SEQVIS_CLI");
    if (env) g_cli_path = env;
  }

  int failures = 0;
  int matched = 0;
  for (const Criterion& c : kCriteria) {
    if (!filter.empty() && filter != c.name) continue;
    ++matched;
    try {
      c.fn();
      std::printf("[PASS] %s\n", c.name);
    } catch (const std::exception& e) {
      std::printf("[FAIL] %s - %s\n", c.name, e.what());
      ++failures;
    }
    std::fflush(stdout);
  }
  if (matched == 0) {
    std::fprintf(stderr, "unknown criterion '%s'\n", filter.c_str());
    return 64;
  }
  return failures;
}
