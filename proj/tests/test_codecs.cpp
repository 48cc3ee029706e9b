#include "seqvis/codecs.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "seqvis/rng.hpp"

using namespace seqvis;

namespace {

Vocabulary full_scale_vocab() { return build_vocabulary({1000, 80, 32000, 14}); }

// Fixed ids under the full-scale layout.
constexpr TokenId kNoise = 1080;
constexpr TokenId kSep = 1081;
constexpr TokenId kEos = 1082;
constexpr TokenId kInv = 1083;
constexpr TokenId kPromptDetect = 1084;
constexpr TokenId kPromptSegment = 1085;
constexpr TokenId kPromptKeypoint = 1086;
constexpr TokenId kPromptCaption = 1087;
constexpr TokenId kTextBase = 1088;

InstanceAnnotation box_instance(BBox box, int cls) {
  InstanceAnnotation inst;
  inst.bbox = box;
  inst.class_id = cls;
  return inst;
}

}  // namespace

TEST(DetectionCodec, SingleInstanceTokens) {
  Vocabulary v = full_scale_vocab();
  Rng rng(1);
  std::vector<InstanceAnnotation> insts = {
      box_instance(BBox{0.25, 0.5, 0.75, 1.0}, 3)};
  TokenSequence seq = encode_detection(insts, v, rng);
  std::vector<TokenId> expected = {kPromptDetect, 250, 500, 750, 999, 1003, kEos};
  EXPECT_EQ(seq.ids, expected);
  EXPECT_EQ(seq.prompt_len, 1u);
  std::vector<double> weights = {0, 1, 1, 1, 1, 1, 1};
  EXPECT_EQ(seq.weights, weights);
}

TEST(DetectionCodec, EmptyScene) {
  Vocabulary v = full_scale_vocab();
  Rng rng(1);
  TokenSequence seq = encode_detection(std::vector<InstanceAnnotation>{}, v, rng);
  EXPECT_EQ(seq.ids, (std::vector<TokenId>{kPromptDetect, kEos}));
}

TEST(DetectionCodec, BothOrderingsOccurAcrossSeeds) {
  Vocabulary v = full_scale_vocab();
  std::vector<InstanceAnnotation> insts = {
      box_instance(BBox{0.0, 0.0, 0.1, 0.1}, 0),
      box_instance(BBox{0.5, 0.5, 0.9, 0.9}, 1)};
  std::set<TokenId> first_class_tokens;
  for (std::uint64_t seed = 0; seed < 32; ++seed) {
    Rng rng(seed);
    TokenSequence seq = encode_detection(insts, v, rng);
    first_class_tokens.insert(seq.ids[5]);  // class slot of the first tuple
  }
  EXPECT_EQ(first_class_tokens.size(), 2u);
}

TEST(DetectionCodec, OverflowNamesTheLimit) {
  Vocabulary v = full_scale_vocab();
  Rng rng(1);
  CodecConfig cfg;
  cfg.max_seq_len = 10;
  std::vector<InstanceAnnotation> insts = {
      box_instance(BBox{0, 0, 0.1, 0.1}, 0), box_instance(BBox{0, 0, 0.2, 0.2}, 1)};
  try {
    encode_detection(insts, v, rng, cfg);
    FAIL() << "expected length_error";
  } catch (const std::length_error& e) {
    EXPECT_NE(std::string(e.what()).find("10"), std::string::npos);
  }
}

TEST(DetectionCodec, DecodeHandCase) {
  Vocabulary v = full_scale_vocab();
  std::vector<TokenId> ids = {250, 500, 750, 999, 1003, kEos};
  DecodedDetection det = decode_detection(ids, nullptr, v);
  ASSERT_EQ(det.size(), 1u);
  EXPECT_NEAR(det[0].box.ymin, 0.2505, 1e-12);
  EXPECT_NEAR(det[0].box.xmin, 0.5005, 1e-12);
  EXPECT_NEAR(det[0].box.ymax, 0.7505, 1e-12);
  EXPECT_NEAR(det[0].box.xmax, 0.9995, 1e-12);
  EXPECT_EQ(det[0].class_id, 3);
  EXPECT_DOUBLE_EQ(det[0].score, 1.0);
}

TEST(DetectionCodec, DecodeScoresFromClassTokenProbability) {
  Vocabulary v = full_scale_vocab();
  std::vector<TokenId> ids = {250, 500, 750, 999, 1003, kEos};
  std::vector<double> probs = {0.9, 0.8, 0.7, 0.6, 0.42, 0.99};
  DecodedDetection det = decode_detection(ids, &probs, v);
  ASSERT_EQ(det.size(), 1u);
  EXPECT_DOUBLE_EQ(det[0].score, 0.42);
}

TEST(DetectionCodec, DecodeEdgeCases) {
  Vocabulary v = full_scale_vocab();
  std::size_t warnings = 0;
  EXPECT_TRUE(decode_detection(std::vector<TokenId>{kEos}, nullptr, v, &warnings).empty());
  EXPECT_EQ(warnings, 0u);

  // Trailing incomplete tuple.
  warnings = 0;
  std::vector<TokenId> partial = {250, 500, 750, kEos};
  EXPECT_TRUE(decode_detection(partial, nullptr, v, &warnings).empty());
  EXPECT_EQ(warnings, 1u);

  // Noise tuples are dropped without a warning.
  warnings = 0;
  std::vector<TokenId> noise = {250, 500, 750, 999, kNoise, kEos};
  EXPECT_TRUE(decode_detection(noise, nullptr, v, &warnings).empty());
  EXPECT_EQ(warnings, 0u);

  // Wrong-kind token inside a tuple: tuple dropped, parse continues.
  warnings = 0;
  std::vector<TokenId> junk = {250, kSep, 750, 999, 1003,
                               250, 500, 750, 999, 1005, kEos};
  DecodedDetection det = decode_detection(junk, nullptr, v, &warnings);
  ASSERT_EQ(det.size(), 1u);
  EXPECT_EQ(det[0].class_id, 5);
  EXPECT_EQ(warnings, 1u);
}

TEST(DetectionCodec, RandomRoundTrip) {
  Vocabulary v = full_scale_vocab();
  Rng rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<InstanceAnnotation> insts;
    std::size_t n = rng.uniform_index(6);
    for (std::size_t i = 0; i < n; ++i) {
      double y0 = rng.uniform(), y1 = rng.uniform();
      double x0 = rng.uniform(), x1 = rng.uniform();
      insts.push_back(box_instance(BBox{std::min(y0, y1), std::min(x0, x1),
                                        std::max(y0, y1), std::max(x0, x1)},
                                   static_cast<int>(rng.uniform_index(80))));
    }
    TokenSequence seq = encode_detection(insts, v, rng);
    std::vector<TokenId> body(seq.ids.begin() + 1, seq.ids.end());
    DecodedDetection det = decode_detection(body, nullptr, v);
    ASSERT_EQ(det.size(), insts.size());
    // Order-insensitive comparison: quantizing a decoded coordinate recovers
    // the encoded bin exactly, so (class, bins) keys must match as multisets,
    // which also pins every coordinate within half a bin (5e-4) of its source.
    auto key = [](const BBox& b, int c) {
      return std::make_tuple(c, quantize(b.ymin, 1000), quantize(b.xmin, 1000),
                             quantize(b.ymax, 1000), quantize(b.xmax, 1000));
    };
    std::multiset<std::tuple<int, int, int, int, int>> want, got;
    std::multiset<double> want_coords, got_coords;
    for (const auto& inst : insts) {
      want.insert(key(inst.bbox, inst.class_id));
    }
    for (const auto& d : det) {
      got.insert(key(d.box, d.class_id));
    }
    EXPECT_EQ(want, got);
    for (std::size_t i = 0; i < det.size(); ++i) {
      // Bin membership equal implies the 5e-4 bound; spot-check it directly.
      EXPECT_LE(std::abs(dequantize(quantize(det[i].box.ymin, 1000), 1000) -
                         det[i].box.ymin),
                5e-4);
    }
  }
}

TEST(SegmentationCodec, TriangleTokensAtTwoBins) {
  Vocabulary v = build_vocabulary({2, 1, 1, 1});
  InstanceAnnotation inst;
  inst.bbox = BBox{0, 0, 1, 1};
  inst.polygons = {Polygon{{{0, 0}, {0, 1}, {1, 0}}}};
  TokenId eos = v.eos();
  TokenId prompt = v.prompt_token(Task::Segment);
  std::set<std::vector<TokenId>> bodies;
  for (std::uint64_t seed = 0; seed < 24; ++seed) {
    Rng rng(seed);
    TokenSequence seq = encode_segmentation(inst, v, rng);
    EXPECT_EQ(seq.prompt_len, 5u);
    EXPECT_EQ(seq.ids[0], prompt);
    // Condition box (0,0,1,1) quantizes to bins 0,0,1,1.
    EXPECT_EQ(seq.ids[1], 0);
    EXPECT_EQ(seq.ids[2], 0);
    EXPECT_EQ(seq.ids[3], 1);
    EXPECT_EQ(seq.ids[4], 1);
    bodies.insert(std::vector<TokenId>(seq.ids.begin() + 5, seq.ids.end()));
  }
  // Exactly the three cyclic rotations of the vertex list occur.
  std::set<std::vector<TokenId>> expected = {
      {0, 0, 0, 1, 1, 0, eos},
      {0, 1, 1, 0, 0, 0, eos},
      {1, 0, 0, 0, 0, 1, eos},
  };
  EXPECT_EQ(bodies, expected);
}

TEST(SegmentationCodec, SeparatorCountEqualsPolygonsMinusOne) {
  Vocabulary v = full_scale_vocab();
  Rng rng(3);
  InstanceAnnotation inst;
  inst.bbox = BBox{0, 0, 1, 1};
  inst.polygons = {Polygon{{{0.1, 0.1}, {0.1, 0.4}, {0.4, 0.1}}},
                   Polygon{{{0.5, 0.5}, {0.5, 0.9}, {0.9, 0.5}}},
                   Polygon{{{0.2, 0.6}, {0.3, 0.8}, {0.4, 0.6}}}};
  TokenSequence seq = encode_segmentation(inst, v, rng);
  std::size_t separators = 0;
  for (TokenId id : seq.ids) {
    if (id == v.separator()) ++separators;
  }
  EXPECT_EQ(separators, 2u);
}

TEST(SegmentationCodec, VertexCapDownsamples) {
  Vocabulary v = full_scale_vocab();
  Rng rng(3);
  InstanceAnnotation inst;
  inst.bbox = BBox{0, 0, 1, 1};
  Polygon big;
  for (int i = 0; i < 300; ++i) {
    double a = 2.0 * 3.141592653589793 * i / 300.0;
    big.vertices.push_back(
        Point{0.5 + 0.4 * std::sin(a), 0.5 + 0.4 * std::cos(a)});
  }
  inst.polygons = {big};
  TokenSequence seq = encode_segmentation(inst, v, rng);
  // prompt(5) + 2 * vertices + eos(1), vertices capped at 128
  EXPECT_LE(seq.ids.size(), 5u + 2u * 128u + 1u);
  EXPECT_GE(seq.ids.size(), 5u + 2u * 3u + 1u);
}

TEST(SegmentationCodec, RejectsInstanceWithoutPolygons) {
  Vocabulary v = full_scale_vocab();
  Rng rng(3);
  InstanceAnnotation inst;
  inst.bbox = BBox{0, 0, 1, 1};
  EXPECT_THROW(encode_segmentation(inst, v, rng), std::invalid_argument);
}

TEST(SegmentationCodec, DecodeFullSquareAndEmpty) {
  Vocabulary v = full_scale_vocab();
  std::vector<TokenId> square = {0, 0, 0, 999, 999, 999, 999, 0, kEos};
  BinaryMask m = decode_segmentation_sample(square, v, 4, 4);
  EXPECT_EQ(m.count_on(), 16u);
  BinaryMask empty = decode_segmentation_sample(std::vector<TokenId>{kEos}, v, 4, 4);
  EXPECT_EQ(empty.count_on(), 0u);
}

TEST(SegmentationCodec, RoundTripMatchesRasterizerOracle) {
  Vocabulary v = full_scale_vocab();
  Rng rng(17);
  Polygon tri{{{0.1, 0.2}, {0.15, 0.85}, {0.8, 0.4}}};
  InstanceAnnotation inst;
  inst.bbox = BBox{0.1, 0.2, 0.8, 0.85};
  inst.polygons = {tri};
  TokenSequence seq = encode_segmentation(inst, v, rng);
  std::vector<TokenId> body(seq.ids.begin() + 5, seq.ids.end());
  BinaryMask decoded = decode_segmentation_sample(body, v, 64, 64);
  BinaryMask original = rasterize(std::vector<Polygon>{tri}, 64, 64);
  EXPECT_GE(mask_iou(decoded, original), 0.99);
}

TEST(SegmentationCodec, TolerantDecodeTallies) {
  Vocabulary v = full_scale_vocab();
  std::size_t warnings = 0;
  // Odd coordinate count: trailing token dropped; tiny polygon dropped.
  std::vector<TokenId> ids = {10, 20, 30, 40, 50, kSep, 1, 2, 3, kEos};
  BinaryMask m = decode_segmentation_sample(ids, v, 8, 8, &warnings);
  EXPECT_EQ(m.count_on(), 0u);
  // one odd-unpaired drop in each segment, plus two sub-3-vertex polygons
  EXPECT_EQ(warnings, 4u);

  warnings = 0;
  std::vector<TokenId> foreign = {10, 20, kPromptDetect, 30, 40, 50, 60, kEos};
  decode_segmentation_sample(foreign, v, 8, 8, &warnings);
  EXPECT_EQ(warnings, 1u);  // foreign token skipped; 3 vertices survive
}

TEST(VoteMasks, StrictMajorityHandCases) {
  std::vector<BinaryMask> samples(8, BinaryMask(1, 1));
  for (int i = 0; i < 5; ++i) samples[static_cast<std::size_t>(i)].set(0, 0, true);
  EXPECT_TRUE(vote_masks(samples).at(0, 0));  // 5 of 8
  samples[4].set(0, 0, false);
  EXPECT_FALSE(vote_masks(samples).at(0, 0));  // 4 of 8
}

TEST(VoteMasks, SingleSampleIsIdentity) {
  BinaryMask m(2, 3);
  m.set(0, 1, true);
  m.set(1, 2, true);
  EXPECT_EQ(vote_masks(std::vector<BinaryMask>{m}), m);
}

TEST(VoteMasks, MatchesBruteForceMajority) {
  Rng rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    std::size_t n = 1 + rng.uniform_index(9);
    std::vector<BinaryMask> samples(n, BinaryMask(4, 4));
    for (auto& m : samples) {
      for (auto& b : m.bits) b = rng.uniform() < 0.5 ? 1 : 0;
    }
    BinaryMask voted = vote_masks(samples);
    for (std::size_t i = 0; i < 16; ++i) {
      std::size_t on = 0;
      for (const auto& m : samples) on += m.bits[i];
      EXPECT_EQ(voted.bits[i] != 0, on > n - on);
    }
  }
}

TEST(VoteMasks, Errors) {
  EXPECT_THROW(vote_masks(std::vector<BinaryMask>{}), std::invalid_argument);
  std::vector<BinaryMask> bad = {BinaryMask(2, 2), BinaryMask(2, 3)};
  EXPECT_THROW(vote_masks(bad), std::invalid_argument);
}

TEST(KeypointCodec, TwoPointExample) {
  Vocabulary v = build_vocabulary({1000, 80, 32000, 2});
  InstanceAnnotation inst;
  inst.bbox = BBox{0, 0, 1, 1};
  KeypointSet kps;
  kps.points.push_back(Keypoint{0.5, 0.5, false});
  kps.points.push_back(occluded_keypoint());
  inst.keypoints = kps;
  TokenSequence seq = encode_keypoints(inst, v);
  EXPECT_EQ(seq.prompt_len, 5u);
  std::vector<TokenId> body(seq.ids.begin() + 5, seq.ids.end());
  EXPECT_EQ(body, (std::vector<TokenId>{500, 500, kInv, kInv, kEos}));
  std::vector<double> body_weights(seq.weights.begin() + 5, seq.weights.end());
  EXPECT_EQ(body_weights, (std::vector<double>{1, 1, 0.1, 0.1, 1}));
}

TEST(KeypointCodec, AllOccludedAndFixedArity) {
  Vocabulary v = build_vocabulary({1000, 80, 32000, 4});
  InstanceAnnotation inst;
  inst.bbox = BBox{0.2, 0.2, 0.8, 0.8};
  inst.keypoints = KeypointSet{{occluded_keypoint(), occluded_keypoint(),
                                occluded_keypoint(), occluded_keypoint()}};
  TokenSequence seq = encode_keypoints(inst, v);
  EXPECT_EQ(seq.ids.size() - seq.prompt_len, 2u * 4u + 1u);
  for (std::size_t i = seq.prompt_len; i + 1 < seq.ids.size(); ++i) {
    EXPECT_EQ(seq.ids[i], kInv);
  }
}

TEST(KeypointCodec, RequiresKeypointSet) {
  Vocabulary v = build_vocabulary({1000, 80, 32000, 2});
  InstanceAnnotation inst;
  inst.bbox = BBox{0, 0, 1, 1};
  EXPECT_THROW(encode_keypoints(inst, v), std::invalid_argument);
  inst.keypoints = KeypointSet{{Keypoint{0.5, 0.5, false}}};  // wrong K
  EXPECT_THROW(encode_keypoints(inst, v), std::invalid_argument);
}

TEST(KeypointCodec, DecodeHandCase) {
  Vocabulary v = build_vocabulary({1000, 80, 32000, 2});
  KeypointSet kps = decode_keypoints(std::vector<TokenId>{500, 500, kInv, kInv}, v);
  ASSERT_EQ(kps.points.size(), 2u);
  EXPECT_FALSE(kps.points[0].occluded);
  EXPECT_NEAR(kps.points[0].y, 0.5005, 1e-12);
  EXPECT_NEAR(kps.points[0].x, 0.5005, 1e-12);
  EXPECT_TRUE(kps.points[1].occluded);

  KeypointSet all_occ =
      decode_keypoints(std::vector<TokenId>{kInv, kInv, kInv, kInv, kEos}, v);
  EXPECT_TRUE(all_occ.points[0].occluded);
  EXPECT_TRUE(all_occ.points[1].occluded);

  EXPECT_THROW(decode_keypoints(std::vector<TokenId>{500, 500, kInv}, v),
               std::invalid_argument);
}

TEST(KeypointCodec, RoundTripWithinQuantizerBound) {
  Vocabulary v = build_vocabulary({1000, 80, 32000, 3});
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    InstanceAnnotation inst;
    inst.bbox = BBox{0, 0, 1, 1};
    KeypointSet kps;
    for (int k = 0; k < 3; ++k) {
      if (rng.uniform() < 0.3) {
        kps.points.push_back(occluded_keypoint());
      } else {
        kps.points.push_back(Keypoint{rng.uniform(), rng.uniform(), false});
      }
    }
    inst.keypoints = kps;
    TokenSequence seq = encode_keypoints(inst, v);
    std::vector<TokenId> body(seq.ids.begin() + 5, seq.ids.end());
    KeypointSet back = decode_keypoints(body, v);
    for (int k = 0; k < 3; ++k) {
      EXPECT_EQ(back.points[k].occluded, kps.points[k].occluded);
      if (!kps.points[k].occluded) {
        EXPECT_LE(std::abs(back.points[k].y - kps.points[k].y), 5e-4);
        EXPECT_LE(std::abs(back.points[k].x - kps.points[k].x), 5e-4);
      }
    }
  }
}

TEST(CaptionCodec, HandCaseAndRoundTrip) {
  Vocabulary v = full_scale_vocab();
  TokenSequence seq = encode_caption("ab", v);
  EXPECT_EQ(seq.ids, (std::vector<TokenId>{kPromptCaption, kTextBase + 97,
                                           kTextBase + 98, kEos}));
  EXPECT_THROW(encode_caption("", v), std::invalid_argument);

  std::string text = "Shapes: a red ellipse\tand \xc3\xa9!";
  TokenSequence enc = encode_caption(text, v);
  std::vector<TokenId> body(enc.ids.begin() + 1, enc.ids.end());
  EXPECT_EQ(decode_caption(body, v), text);
}

TEST(CaptionCodec, DecodeHandCases) {
  Vocabulary v = full_scale_vocab();
  EXPECT_EQ(decode_caption(std::vector<TokenId>{kTextBase + 104, kTextBase + 105, kEos}, v),
            "hi");
  EXPECT_EQ(decode_caption(std::vector<TokenId>{kEos}, v), "");
  std::size_t warnings = 0;
  std::vector<TokenId> mixed = {kTextBase + 104, 42, kTextBase + 105, kEos};
  EXPECT_EQ(decode_caption(mixed, v, &warnings), "hi");
  EXPECT_EQ(warnings, 1u);
}

TEST(CaptionCodec, TruncatesAtByteBoundary) {
  Vocabulary v = full_scale_vocab();
  CodecConfig cfg;
  cfg.max_seq_len = 6;  // prompt + 4 bytes + eos
  std::size_t warnings = 0;
  TokenSequence seq = encode_caption("abcdefgh", v, cfg, &warnings);
  EXPECT_EQ(seq.ids.size(), 6u);
  EXPECT_EQ(warnings, 1u);
  std::vector<TokenId> body(seq.ids.begin() + 1, seq.ids.end());
  EXPECT_EQ(decode_caption(body, v), "abcd");
}

TEST(Assemble, WeightsZeroOnPromptAndLengths) {
  Vocabulary v = full_scale_vocab();
  TokenSequence body;
  body.ids = {1, 2, 3};
  body.weights = {0.5, 1.0, 0.25};
  TokenSequence out = assemble_training_sequence(TaskPrompt::detect(), body, v);
  EXPECT_EQ(out.ids.size(), 4u);
  EXPECT_EQ(out.prompt_len, 1u);
  EXPECT_EQ(out.weights, (std::vector<double>{0, 0.5, 1.0, 0.25}));
  for (std::size_t j = 0; j < out.prompt_len; ++j) {
    EXPECT_EQ(out.weights[j], 0.0);
  }

  TokenSequence seg =
      assemble_training_sequence(TaskPrompt::segment(BBox{0, 0, 1, 1}), body, v);
  EXPECT_EQ(seg.prompt_len, 5u);

  CodecConfig tiny;
  tiny.max_seq_len = 3;
  EXPECT_THROW(assemble_training_sequence(TaskPrompt::detect(), body, v, tiny),
               std::length_error);
}

TEST(Assemble, PromptConditionRules) {
  Vocabulary v = full_scale_vocab();
  EXPECT_THROW(prompt_tokens(TaskPrompt{Task::Segment, std::nullopt}, v),
               std::invalid_argument);
  EXPECT_THROW(prompt_tokens(TaskPrompt{Task::Detect, BBox{0, 0, 1, 1}}, v),
               std::invalid_argument);
  EXPECT_EQ(prompt_tokens(TaskPrompt::keypoint(BBox{0.25, 0.5, 0.75, 1.0}), v),
            (std::vector<TokenId>{kPromptKeypoint, 250, 500, 750, 999}));
}

TEST(SequenceStream, GoldenLineAndRoundTrip) {
  Vocabulary v = full_scale_vocab();
  Rng rng(1);
  std::vector<InstanceAnnotation> insts = {
      box_instance(BBox{0.25, 0.5, 0.75, 1.0}, 3)};
  SequenceRecord rec{Task::Detect, encode_detection(insts, v, rng)};
  std::ostringstream out;
  write_sequence_record(out, rec);
  EXPECT_EQ(out.str(),
            "detect 1 1084:0 250:1 500:1 750:1 999:1 1003:1 1082:1\n");

  SequenceRecord kp{Task::Keypoint, TokenSequence{{kPromptKeypoint, 500, kInv},
                                                  {0.0, 1.0, 0.1},
                                                  1}};
  std::stringstream ss;
  write_sequence_record(ss, rec);
  write_sequence_record(ss, kp);
  std::vector<SequenceRecord> back = read_sequence_stream(ss);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0], rec);
  EXPECT_EQ(back[1], kp);
}

TEST(SequenceStream, RejectsMalformedLines) {
  std::istringstream bad1("detect x 1:1\n");
  EXPECT_THROW(read_sequence_stream(bad1), std::exception);
  std::istringstream bad2("detect 1 15\n");
  EXPECT_THROW(read_sequence_stream(bad2), std::runtime_error);
  std::istringstream bad3("detect 9 1:1\n");
  EXPECT_THROW(read_sequence_stream(bad3), std::runtime_error);
}
