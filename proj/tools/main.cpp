// seqvis: batch CLI over the shared pixel-to-sequence interface.
//
// Subcommands: gen-data, encode, decode, train, sample, eval, weights-sweep.
// Every subcommand is deterministic under --seed. Exit codes: 0 success,
// 1 usage error, 2 data error.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "seqvis/seqvis.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace seqvis;

namespace {

struct CommonArgs {
  std::string config_path;
  std::uint64_t seed = 0;
  std::string task = "detect";
  std::string input;
  std::string out;
  std::size_t samples = 8;
  double nucleus_p = 0.8;
  long steps = -1;
  long image_size = 0;  // 0: take from config
  long limit = 0;       // 0: no limit
};

ConfigFile load_config(const std::string& path) {
  if (path.empty()) return ConfigFile{};
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  return parse_config(in);
}

ConfigFile config_from_text(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

VocabConfig vocab_from(const ConfigFile& cfg) {
  VocabConfig v;
  v.num_coord_bins = static_cast<int>(cfg.get_long("vocab.bins", 1000));
  v.num_classes = static_cast<int>(cfg.get_long("vocab.classes", 80));
  v.num_text_tokens = static_cast<int>(cfg.get_long("vocab.text", 256));
  v.keypoint_count = static_cast<int>(cfg.get_long("vocab.keypoints", 14));
  return v;
}

ModelConfig model_from(const ConfigFile& cfg, const Vocabulary& vocab,
                       long image_size_flag) {
  ModelConfig m;
  m.image_size = static_cast<int>(cfg.get_long("model.image_size", 64));
  if (image_size_flag > 0) m.image_size = static_cast<int>(image_size_flag);
  m.patch_size = static_cast<int>(cfg.get_long("model.patch_size", 8));
  m.channels = static_cast<int>(cfg.get_long("model.channels", 3));
  m.width = static_cast<int>(cfg.get_long("model.width", 64));
  m.heads = static_cast<int>(cfg.get_long("model.heads", 4));
  m.enc_blocks = static_cast<int>(cfg.get_long("model.enc_blocks", 2));
  m.dec_blocks = static_cast<int>(cfg.get_long("model.dec_blocks", 2));
  m.ff_mult = static_cast<int>(cfg.get_long("model.ff_mult", 2));
  m.max_seq_len = static_cast<int>(cfg.get_long("model.max_seq_len", 64));
  m.vocab_size = vocab.total_size();
  return m;
}

CodecConfig codec_from(const ConfigFile& cfg) {
  CodecConfig c;
  c.max_seq_len = static_cast<std::size_t>(cfg.get_long("model.max_seq_len", 64));
  c.max_polygon_points =
      static_cast<std::size_t>(cfg.get_long("codec.max_polygon_points", 128));
  c.invisible_weight = cfg.get_double("codec.invisible_weight", 0.1);
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
}

json box_json(const BBox& b) { return json::array({b.ymin, b.xmin, b.ymax, b.xmax}); }

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

int run_gen_data(const CommonArgs& args, long num, long min_shapes, long max_shapes) {
  SyntheticConfig cfg;
  cfg.seed = args.seed;
  if (args.image_size > 0) cfg.image_size = static_cast<std::size_t>(args.image_size);
  cfg.min_shapes = static_cast<int>(min_shapes);
  cfg.max_shapes = static_cast<int>(max_shapes);
  auto scenes = generate_synthetic(cfg, static_cast<std::size_t>(num));
  std::vector<std::string> names = {"rectangle", "triangle", "ellipse"};
  fs::path out(args.out);
  if (!out.parent_path().empty()) fs::create_directories(out.parent_path());
  write_coco(out.string(), scenes, names);
  std::cout << "wrote " << scenes.size() << " scenes to " << out.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// encode
// ---------------------------------------------------------------------------

int run_encode(const CommonArgs& args) {
  ConfigFile cfg = load_config(args.config_path);
  Vocabulary vocab = build_vocabulary(vocab_from(cfg));
  CodecConfig codec = codec_from(cfg);
  Task task = parse_task(args.task);
  auto scenes = load_coco(args.input);
  Rng rng(args.seed);

  fs::create_directories(args.out);
  std::ofstream out(fs::path(args.out) / "sequences.txt", std::ios::binary);
  std::size_t records = 0;
  for (std::size_t si = 0; si < scenes.size(); ++si) {
    const SceneAnnotation& scene = scenes[si];
    std::vector<SequenceRecord> recs;
    switch (task) {
      case Task::Detect:
        recs.push_back({task, encode_detection(scene.instances, vocab, rng, codec)});
        break;
      case Task::Segment:
        for (const InstanceAnnotation& inst : scene.instances) {
          if (!inst.polygons.empty()) {
            recs.push_back({task, encode_segmentation(inst, vocab, rng, codec)});
          }
        }
        break;
      case Task::Keypoint:
        for (const InstanceAnnotation& inst : scene.instances) {
          if (inst.keypoints) {
            recs.push_back({task, encode_keypoints(inst, vocab, codec)});
          }
        }
        break;
      case Task::Caption:
        for (const std::string& caption : scene.captions) {
          recs.push_back({task, encode_caption(caption, vocab, codec)});
        }
        break;
    }
    for (const SequenceRecord& rec : recs) {
      write_sequence_record(out, rec);
      ++records;
    }
  }
  std::cout << "encoded " << records << " records\n";
  return 0;
}

// ---------------------------------------------------------------------------
// decode
// ---------------------------------------------------------------------------

int run_decode(const CommonArgs& args) {
  ConfigFile cfg = load_config(args.config_path);
  Vocabulary vocab = build_vocabulary(vocab_from(cfg));
  std::size_t raster = args.image_size > 0 ? static_cast<std::size_t>(args.image_size)
                                           : 64;
  std::ifstream in(args.input);
  if (!in) throw std::runtime_error("cannot open sequence file " + args.input);
  auto records = read_sequence_stream(in);

  fs::create_directories(args.out);
  std::ofstream jsonl(fs::path(args.out) / "decoded.jsonl", std::ios::binary);
  std::size_t total_warnings = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const SequenceRecord& rec = records[i];
    std::span<const TokenId> body(rec.seq.ids.data() + rec.seq.prompt_len,
                                  rec.seq.ids.size() - rec.seq.prompt_len);
    json obj;
    obj["record"] = i;
    obj["task"] = std::string(task_tag(rec.task));
    std::size_t warnings = 0;
    std::string svg;
    switch (rec.task) {
      case Task::Detect: {
        DecodedDetection det = decode_detection(body, nullptr, vocab, &warnings);
        json boxes = json::array(), classes = json::array(), scores = json::array();
        for (const DecodedBox& b : det) {
          boxes.push_back(box_json(b.box));
          classes.push_back(b.class_id);
          scores.push_back(b.score);
        }
        obj["boxes"] = boxes;
        obj["classes"] = classes;
        obj["scores"] = scores;
        svg = render_detections_svg(det, raster, raster);
        break;
      }
      case Task::Segment: {
        std::vector<Polygon> polys = decode_segmentation_polygons(body, vocab, &warnings);
        json jp = json::array();
        for (const Polygon& p : polys) {
          json ring = json::array();
          for (const Point& pt : p.vertices) ring.push_back(json::array({pt.y, pt.x}));
          jp.push_back(ring);
        }
        obj["polygons"] = jp;
        svg = render_polygons_svg(polys, raster, raster);
        break;
      }
      case Task::Keypoint: {
        KeypointSet kps = decode_keypoints(body, vocab);
        json jk = json::array();
        for (const Keypoint& kp : kps.points) {
          jk.push_back(json::array({kp.y, kp.x, !kp.occluded}));
        }
        obj["keypoints"] = jk;
        svg = render_keypoints_svg(std::vector<KeypointSet>{kps}, raster, raster);
        break;
      }
      case Task::Caption: {
        std::string text = decode_caption(body, vocab, &warnings);
        obj["caption"] = text;
        svg = render_caption_svg(text, raster, raster);
        break;
      }
    }
    obj["warnings"] = warnings;
    total_warnings += warnings;
    jsonl << obj.dump() << "\n";
    char name[32];
    std::snprintf(name, sizeof(name), "record_%04zu.svg", i);
    write_text(fs::path(args.out) / name, svg);
  }
  std::cout << "decoded " << records.size() << " records, " << total_warnings
            << " warnings\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

std::string resolved_config_text(const ConfigFile& cfg) {
  std::ostringstream out;
  for (const auto& [k, v] : cfg.entries) out << k << " = " << v << "\n";
  return out.str();
}

TaskMixConfig load_mix_with_data(const ConfigFile& cfg, const fs::path& base) {
  TaskMixConfig mix = mix_config_from(cfg);
  if (mix.tasks.empty()) throw std::runtime_error("config defines no tasks");
  for (TaskSource& src : mix.tasks) {
    if (src.data_path.empty())
      throw std::runtime_error("task." + std::string(task_tag(src.task)) +
                               ".data missing from config");
    fs::path p(src.data_path);
    if (p.is_relative() && !base.empty()) p = base / p;
    src.scenes = load_coco(p.string());
  }
  return mix;
}

int run_train(const CommonArgs& args) {
  ConfigFile cfg = load_config(args.config_path);
  Vocabulary vocab = build_vocabulary(vocab_from(cfg));
  ModelConfig mcfg = model_from(cfg, vocab, args.image_size);
  CodecConfig codec = codec_from(cfg);
  fs::path base = fs::path(args.config_path).parent_path();
  TaskMixConfig mix = load_mix_with_data(cfg, base);

  long steps = args.steps >= 0 ? args.steps : cfg.get_long("train.steps", 0);
  std::size_t batch_size =
      static_cast<std::size_t>(cfg.get_long("train.batch_size", 8));
  TrainOptions opt;
  opt.lr = cfg.get_double("train.lr", 0.003);
  opt.momentum = cfg.get_double("train.momentum", 0.9);
  opt.clip_norm = cfg.get_double("train.clip", 1.0);
  std::string optimizer = cfg.get_or("train.optimizer", "momentum");
  if (optimizer == "sgd") {
    opt.optimizer = OptimizerKind::Sgd;
  } else if (optimizer == "momentum") {
    opt.optimizer = OptimizerKind::Momentum;
  } else if (optimizer == "adam") {
    opt.optimizer = OptimizerKind::Adam;
  } else {
    throw std::runtime_error("unknown train.optimizer '" + optimizer + "'");
  }

  Rng rng(args.seed);
  Trainer trainer(init_params(mcfg, rng), opt);
  std::vector<std::string> metrics;
  std::size_t image_size = static_cast<std::size_t>(mcfg.image_size);

  if (mix.strategy == MixStrategy::BatchMix) {
    for (long step = 0; step < steps; ++step) {
      TrainingBatch batch =
          next_batch_batchmix(mix, vocab, codec, batch_size, image_size, rng);
      double loss = trainer.step(batch);
      json line = {{"step", step},
                   {"task", std::string(task_tag(*batch.task))},
                   {"loss", loss}};
      metrics.push_back(line.dump());
    }
  } else {
    auto pool = build_mixed_dataset(mix, vocab, codec, image_size, rng);
    std::size_t cursor = 0;
    for (long step = 0; step < steps; ++step) {
      TrainingBatch batch;
      batch.gradient_weight = 1.0;
      for (std::size_t i = 0; i < batch_size; ++i) {
        if (cursor == pool.size()) {
          rng.shuffle(pool);
          cursor = 0;
        }
        batch.examples.push_back(TrainExample{pool[cursor].image, pool[cursor].seq});
        ++cursor;
      }
      double loss = trainer.step(batch);
      json line = {{"step", step}, {"task", "mix"}, {"loss", loss}};
      metrics.push_back(line.dump());
    }
  }

  persist_run(args.out, resolved_config_text(cfg), save_checkpoint(trainer.params()),
              metrics);
  std::cout << "trained " << steps << " steps, run saved to " << args.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// sample / eval share model loading and per-task inference
// ---------------------------------------------------------------------------

struct LoadedModel {
  ConfigFile cfg;
  Vocabulary vocab;
  ModelParams params;
  CodecConfig codec;

  explicit LoadedModel(const LoadedRun& run)
      : cfg(config_from_text(run.config_text)),
        vocab(build_vocabulary(vocab_from(cfg))),
        params(load_checkpoint(run.checkpoint_bytes)),
        codec(codec_from(cfg)) {
    if (params.config.vocab_size != vocab.total_size())
      throw std::runtime_error("checkpoint vocabulary does not match config");
  }
};

int run_sample(const CommonArgs& args, const std::string& run_dir) {
  LoadedModel model(load_run(run_dir));
  TransformerEstimator est(model.params);
  Task task = parse_task(args.task);
  auto scenes = load_coco(args.input);
  if (args.limit > 0 && scenes.size() > static_cast<std::size_t>(args.limit)) {
    scenes.resize(static_cast<std::size_t>(args.limit));
  }
  std::size_t image_size = static_cast<std::size_t>(model.params.config.image_size);
  SamplerConfig scfg;
  scfg.nucleus_p = args.nucleus_p;
  scfg.max_len = static_cast<std::size_t>(model.params.config.max_seq_len) - 6;
  Rng root(args.seed);

  fs::create_directories(args.out);
  std::ofstream jsonl(fs::path(args.out) / "samples.jsonl", std::ios::binary);
  for (std::size_t si = 0; si < scenes.size(); ++si) {
    const SceneAnnotation& scene = scenes[si];
    ImageTensor image = scene_pixels(scene, image_size);
    Rng scene_rng = root.fork(si);
    json obj;
    obj["scene"] = si;
    obj["task"] = std::string(task_tag(task));
    switch (task) {
      case Task::Detect: {
        GenerationResult gen =
            generate(est, image, TaskPrompt::detect(), model.vocab, scfg, scene_rng);
        std::size_t warnings = 0;
        DecodedDetection det =
            decode_detection(gen.ids, &gen.probs, model.vocab, &warnings);
        json boxes = json::array(), classes = json::array(), scores = json::array();
        for (const DecodedBox& b : det) {
          boxes.push_back(box_json(b.box));
          classes.push_back(b.class_id);
          scores.push_back(b.score);
        }
        obj["boxes"] = boxes;
        obj["classes"] = classes;
        obj["scores"] = scores;
        obj["warnings"] = warnings;
        break;
      }
      case Task::Segment: {
        json masks = json::array();
        std::size_t ii = 0;
        for (const InstanceAnnotation& inst : scene.instances) {
          if (inst.polygons.empty()) continue;
          std::vector<TaskPrompt> prompts(args.samples,
                                          TaskPrompt::segment(inst.bbox));
          auto results = generate_parallel(est, image, prompts, model.vocab, scfg,
                                           scene_rng.fork(ii));
          std::vector<BinaryMask> sampled;
          for (const auto& r : results) {
            sampled.push_back(
                decode_segmentation_sample(r.ids, model.vocab, image_size, image_size));
          }
          BinaryMask voted = vote_masks(sampled);
          char name[48];
          std::snprintf(name, sizeof(name), "mask_%04zu_%02zu.pbm", si, ii);
          std::ostringstream pbm;
          write_pbm(pbm, voted);
          write_text(fs::path(args.out) / name, pbm.str());
          masks.push_back({{"instance", ii},
                           {"file", name},
                           {"pixels_on", voted.count_on()},
                           {"samples", args.samples}});
          ++ii;
        }
        obj["masks"] = masks;
        break;
      }
      case Task::Keypoint: {
        json sets = json::array();
        std::size_t ii = 0;
        for (const InstanceAnnotation& inst : scene.instances) {
          if (!inst.keypoints) continue;
          double factor = model.cfg.get_double("task.keypoint.crop", 2.0);
          auto [cropped, region] = crop_for_instance(scene, inst, factor);
          ImageTensor crop_image = scene_pixels(cropped, image_size);
          Rng inst_rng = scene_rng.fork(ii);
          GenerationResult gen = generate(
              est, crop_image, TaskPrompt::keypoint(to_crop_coords(inst, region).bbox),
              model.vocab, scfg, inst_rng);
          KeypointSet kps = decode_keypoints(gen.ids, model.vocab);
          json jk = json::array();
          for (const Keypoint& kp : kps.points) {
            Point src = region.to_source(Point{kp.y, kp.x});
            jk.push_back(json::array({src.y, src.x, !kp.occluded}));
          }
          sets.push_back({{"instance", ii}, {"keypoints", jk}});
          ++ii;
        }
        obj["keypoint_sets"] = sets;
        break;
      }
      case Task::Caption: {
        GenerationResult gen =
            generate(est, image, TaskPrompt::caption(), model.vocab, scfg, scene_rng);
        std::size_t warnings = 0;
        obj["caption"] = decode_caption(gen.ids, model.vocab, &warnings);
        obj["warnings"] = warnings;
        break;
      }
    }
    jsonl << obj.dump() << "\n";
  }
  std::cout << "sampled " << scenes.size() << " scenes\n";
  return 0;
}

double mean_token_prob(const GenerationResult& gen) {
  if (gen.probs.empty()) return 0.0;
  double sum = 0.0;
  for (double p : gen.probs) sum += p;
  return sum / static_cast<double>(gen.probs.size());
}

int run_eval(const CommonArgs& args, const std::string& run_dir) {
  LoadedModel model(load_run(run_dir));
  TransformerEstimator est(model.params);
  auto scenes = load_coco(args.input);
  if (args.limit > 0 && scenes.size() > static_cast<std::size_t>(args.limit)) {
    scenes.resize(static_cast<std::size_t>(args.limit));
  }
  std::size_t image_size = static_cast<std::size_t>(model.params.config.image_size);
  SamplerConfig scfg;
  scfg.nucleus_p = args.nucleus_p;
  scfg.max_len = static_cast<std::size_t>(model.params.config.max_seq_len) - 6;
  Rng root(args.seed);

  std::vector<Task> tasks;
  if (args.task == "all") {
    tasks = {Task::Detect, Task::Segment, Task::Keypoint, Task::Caption};
  } else {
    tasks = {parse_task(args.task)};
  }

  std::vector<std::string> report_lines;
  for (Task task : tasks) {
    MetricReport report;
    report.task = std::string(task_tag(task));
    switch (task) {
      case Task::Detect: {
        std::vector<MatchResult> matches;
        for (std::size_t si = 0; si < scenes.size(); ++si) {
          const SceneAnnotation& scene = scenes[si];
          ImageTensor image = scene_pixels(scene, image_size);
          Rng rng = root.fork(si);
          GenerationResult gen =
              generate(est, image, TaskPrompt::detect(), model.vocab, scfg, rng);
          DecodedDetection det = decode_detection(gen.ids, &gen.probs, model.vocab);
          std::vector<double> scores;
          for (const DecodedBox& b : det) scores.push_back(b.score);
          matches.push_back(match_greedy(
              scores, scene.instances.size(),
              [&](std::size_t p, std::size_t g) {
                if (det[p].class_id != scene.instances[g].class_id) return 0.0;
                return box_iou(det[p].box, scene.instances[g].bbox);
              },
              0.5));
        }
        report.metric = "ap";
        report.thresholds = {0.5};
        report.value = average_precision(matches);
        break;
      }
      case Task::Segment: {
        std::vector<MatchResult> matches;
        for (std::size_t si = 0; si < scenes.size(); ++si) {
          const SceneAnnotation& scene = scenes[si];
          ImageTensor image = scene_pixels(scene, image_size);
          Rng rng = root.fork(si);
          std::vector<double> scores;
          std::vector<BinaryMask> voted;
          std::vector<BinaryMask> gts;
          std::size_t ii = 0;
          for (const InstanceAnnotation& inst : scene.instances) {
            if (inst.polygons.empty()) continue;
            gts.push_back(rasterize(inst.polygons, image_size, image_size));
            std::vector<TaskPrompt> prompts(args.samples,
                                            TaskPrompt::segment(inst.bbox));
            auto results =
                generate_parallel(est, image, prompts, model.vocab, scfg, rng.fork(ii));
            std::vector<BinaryMask> sampled;
            double score = 0.0;
            for (const auto& r : results) {
              sampled.push_back(decode_segmentation_sample(r.ids, model.vocab,
                                                           image_size, image_size));
              score += mean_token_prob(r);
            }
            voted.push_back(vote_masks(sampled));
            scores.push_back(score / static_cast<double>(results.size()));
            ++ii;
          }
          matches.push_back(match_greedy(
              scores, gts.size(),
              [&](std::size_t p, std::size_t g) { return mask_iou(voted[p], gts[g]); },
              0.5));
        }
        report.metric = "mask_ap";
        report.thresholds = {0.5};
        report.value = average_precision(matches);
        break;
      }
      case Task::Keypoint: {
        std::vector<MatchResult> matches;
        OksConfig oks_cfg = OksConfig::uniform(
            static_cast<std::size_t>(model.vocab.config().keypoint_count),
            model.cfg.get_double("eval.oks_kappa", 0.1));
        for (std::size_t si = 0; si < scenes.size(); ++si) {
          const SceneAnnotation& scene = scenes[si];
          Rng rng = root.fork(si);
          std::vector<double> scores;
          std::vector<KeypointSet> preds;
          std::vector<const InstanceAnnotation*> gts;
          std::size_t ii = 0;
          for (const InstanceAnnotation& inst : scene.instances) {
            if (!inst.keypoints) continue;
            gts.push_back(&inst);
            double factor = model.cfg.get_double("task.keypoint.crop", 2.0);
            auto [cropped, region] = crop_for_instance(scene, inst, factor);
            ImageTensor crop_image = scene_pixels(cropped, image_size);
            Rng inst_rng = rng.fork(ii);
            GenerationResult gen = generate(
                est, crop_image,
                TaskPrompt::keypoint(to_crop_coords(inst, region).bbox),
                model.vocab, scfg, inst_rng);
            KeypointSet kps = decode_keypoints(gen.ids, model.vocab);
            for (Keypoint& kp : kps.points) {
              Point src = region.to_source(Point{kp.y, kp.x});
              kp.y = src.y;
              kp.x = src.x;
            }
            preds.push_back(kps);
            scores.push_back(mean_token_prob(gen));
            ++ii;
          }
          matches.push_back(match_greedy(
              scores, gts.size(),
              [&](std::size_t p, std::size_t g) {
                return oks(preds[p], *gts[g]->keypoints, gts[g]->bbox, oks_cfg);
              },
              0.5));
        }
        report.metric = "oks_ap";
        report.thresholds = {0.5};
        report.value = average_precision(matches);
        break;
      }
      case Task::Caption: {
        double total = 0.0;
        std::size_t counted = 0;
        for (std::size_t si = 0; si < scenes.size(); ++si) {
          const SceneAnnotation& scene = scenes[si];
          if (scene.captions.empty()) continue;
          ImageTensor image = scene_pixels(scene, image_size);
          Rng rng = root.fork(si);
          GenerationResult gen =
              generate(est, image, TaskPrompt::caption(), model.vocab, scfg, rng);
          std::string text = decode_caption(gen.ids, model.vocab);
          total += bleu(text, scene.captions, 4);
          ++counted;
        }
        report.metric = "bleu4";
        report.value = counted > 0 ? total / static_cast<double>(counted) : 0.0;
        break;
      }
    }
    report_lines.push_back(report.to_json());
  }

  std::string text;
  for (const std::string& line : report_lines) text += line + "\n";
  if (!args.out.empty()) {
    fs::path out(args.out);
    if (!out.parent_path().empty()) fs::create_directories(out.parent_path());
    write_text(out, text);
  }
  std::cout << text;
  return 0;
}

// ---------------------------------------------------------------------------
// weights-sweep
// ---------------------------------------------------------------------------

int run_weights_sweep(const CommonArgs& args, const std::string& new_task,
                      const std::string& candidates_csv) {
  ConfigFile cfg = load_config(args.config_path);
  TaskMixConfig mix = mix_config_from(cfg);
  if (mix.tasks.empty()) throw std::runtime_error("config defines no tasks");
  std::vector<double> candidates;
  std::istringstream cs(candidates_csv);
  std::string item;
  while (std::getline(cs, item, ',')) candidates.push_back(std::stod(item));
  if (candidates.empty()) throw std::runtime_error("no candidate weights given");

  TaskSource added;
  added.task = parse_task(new_task);
  auto grid = greedy_weight_step(mix, added, candidates);

  std::ostringstream table;
  table << "candidate";
  for (const TaskSource& t : grid[0].tasks) table << " " << task_tag(t.task);
  table << "\n";
  for (std::size_t i = 0; i < grid.size(); ++i) {
    table << candidates[i];
    for (const TaskSource& t : grid[i].tasks) table << " " << t.weight;
    table << "\n";
  }
  std::cout << table.str();
  if (!args.out.empty()) {
    fs::create_directories(args.out);
    write_text(fs::path(args.out) / "sweep.txt", table.str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tokenized multi-task vision interface"};
  app.require_subcommand(1);
  CommonArgs args;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", args.config_path, "key=value config file");
    cmd->add_option("--seed", args.seed, "random seed");
    cmd->add_option("--out", args.out, "output file or directory");
    cmd->add_option("--image-size", args.image_size, "override image size");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  long num = 100, min_shapes = 1, max_shapes = 3;
  add_common(gen);
  gen->add_option("--num", num, "number of scenes");
  gen->add_option("--min-shapes", min_shapes, "minimum shapes per scene");
  gen->add_option("--max-shapes", max_shapes, "maximum shapes per scene");

  CLI::App* enc = app.add_subcommand("encode", "annotations -> sequence file");
  add_common(enc);
  enc->add_option("--input", args.input, "annotation file")->required();
  enc->add_option("--task", args.task, "detect|segment|keypoint|caption");

  CLI::App* dec = app.add_subcommand("decode", "sequence file -> annotations + SVG");
  add_common(dec);
  dec->add_option("--input", args.input, "sequence file")->required();

  CLI::App* train = app.add_subcommand("train", "train the tiny model on a task mix");
  add_common(train);
  train->add_option("--steps", args.steps, "training steps");

  std::string run_dir;
  CLI::App* sample = app.add_subcommand("sample", "generate from a trained run");
  add_common(sample);
  sample->add_option("--run", run_dir, "run directory")->required();
  sample->add_option("--input", args.input, "annotation file")->required();
  sample->add_option("--task", args.task, "detect|segment|keypoint|caption");
  sample->add_option("--samples", args.samples, "mask-vote sample count");
  sample->add_option("--nucleus-p", args.nucleus_p, "nucleus mass");
  sample->add_option("--limit", args.limit, "max scenes (0 = all)");

  CLI::App* ev = app.add_subcommand("eval", "metrics report for a trained run");
  add_common(ev);
  ev->add_option("--run", run_dir, "run directory")->required();
  ev->add_option("--input", args.input, "annotation file")->required();
  ev->add_option("--task", args.task, "detect|segment|keypoint|caption|all");
  ev->add_option("--samples", args.samples, "mask-vote sample count");
  ev->add_option("--nucleus-p", args.nucleus_p, "nucleus mass");
  ev->add_option("--limit", args.limit, "max scenes (0 = all)");

  CLI::App* sweep = app.add_subcommand("weights-sweep", "greedy task-weight grid");
  std::string new_task = "caption", candidates = "0.05,0.1,0.2";
  add_common(sweep);
  sweep->add_option("--new-task", new_task, "task entering the mix");
  sweep->add_option("--candidates", candidates, "comma-separated weights");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {  // --help
      return app.exit(e);
    }
    app.exit(e, std::cout, std::cerr);
    return 1;
  }

  try {
    if (gen->parsed()) return run_gen_data(args, num, min_shapes, max_shapes);
    if (enc->parsed()) return run_encode(args);
    if (dec->parsed()) return run_decode(args);
    if (train->parsed()) return run_train(args);
    if (sample->parsed()) return run_sample(args, run_dir);
    if (ev->parsed()) return run_eval(args, run_dir);
    if (sweep->parsed()) return run_weights_sweep(args, new_task, candidates);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
