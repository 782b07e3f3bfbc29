#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "support.hpp"
#include "t4d/io/formats.hpp"

using namespace t4d;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() / ("t4d_io_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                         "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::invalid_argument;
}

}  // namespace

TEST(Ply, ReadsAscii) {
  std::istringstream in(
      "ply\nformat ascii 1.0\ncomment hi\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\n"
      "property uchar red\nproperty uchar green\nproperty uchar blue\nproperty int segment\n"
      "element face 1\nproperty list uchar int vertex_indices\nend_header\n"
      "0 0 0 255 0 0 7\n1 2 3 0 255 0 7\n-1 0.5 2 0 0 255 9\n3 0 1 2\n");
  const auto c = read_ply(in);
  ASSERT_EQ(c.point_count(), 3u);
  EXPECT_EQ(c.positions[1], (Vec3{1, 2, 3}));
  EXPECT_EQ(c.positions[2][1], 0.5);
  ASSERT_TRUE(c.colors);
  EXPECT_FLOAT_EQ((*c.colors)[0][0], 1.0f);
  EXPECT_FLOAT_EQ((*c.colors)[2][2], 1.0f);
  EXPECT_EQ(*c.segment_ids, (std::vector<std::int64_t>{7, 7, 9}));
}

TEST(Ply, MissingCoordinate) {
  std::istringstream in("ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nend_header\n1 2\n");
  try {
    read_ply(in);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::missing_property);
    EXPECT_STREQ(e.what(), "missing coordinate property");
  }
}

TEST(Ply, RejectsBigEndianAndGarbage) {
  std::istringstream be("ply\nformat binary_big_endian 1.0\nelement vertex 0\nend_header\n");
  EXPECT_EQ(code_of([&] { read_ply(be); }), ErrorCode::unsupported_format);
  std::istringstream junk("not a ply\n");
  EXPECT_EQ(code_of([&] { read_ply(junk); }), ErrorCode::parse_failure);
  std::istringstream truncated(
      "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n");
  EXPECT_EQ(code_of([&] { read_ply(truncated); }), ErrorCode::parse_failure);
  EXPECT_EQ(code_of([] { read_ply(fs::path("/nonexistent/file.ply")); }), ErrorCode::io_failure);
}

TEST(Ply, BinaryRoundTripIsByteExact) {
  StageCloud c;
  c.positions = {{0.25, -1.5, 3}, {1e3, 2e-3, -7}};
  c.colors = std::vector<Rgb>{{1.0f, 0.0f, 0.5019608f}, {0.2f, 0.4f, 0.6f}};
  c.segment_ids = std::vector<std::int64_t>{3, -1};
  for (auto fmt : {PlyFormat::binary_little_endian, PlyFormat::ascii}) {
    std::ostringstream a;
    write_ply(a, c, {fmt, false});
    std::istringstream in(a.str());
    const auto back = read_ply(in);
    std::ostringstream b;
    write_ply(b, back, {fmt, false});
    EXPECT_EQ(a.str(), b.str());
    EXPECT_EQ(back.positions[0], c.positions[0]);
    EXPECT_EQ(*back.segment_ids, *c.segment_ids);
  }
  std::ostringstream d;
  write_ply(d, c, {PlyFormat::binary_little_endian, true});
  std::istringstream din(d.str());
  EXPECT_EQ(read_ply(din).positions, c.positions);
}

TEST(Rle, RoundTripAndValidation) {
  const std::vector<PointIndex> pts{0, 1, 2, 5, 7, 8};
  const auto runs = rle_encode(pts);
  EXPECT_EQ(runs, (std::vector<std::int64_t>{0, 3, 5, 1, 7, 2}));
  EXPECT_EQ(rle_decode(runs), pts);
  EXPECT_EQ(rle_decode({0, 2, 2, 1}), (std::vector<PointIndex>{0, 1, 2}));
  EXPECT_THROW(rle_decode({0, 3, 2, 1}), Error);
  EXPECT_THROW(rle_decode({5, 0}), Error);
  EXPECT_THROW(rle_decode({-1, 2}), Error);
  EXPECT_THROW(rle_decode({1}), Error);
}

TEST(Predictions, JsonRoundTrip) {
  PredictionSet ps{"scene", {support::mask(3, 1, {{0, {1, 2, 3, 9}}, {2, {4}}}, 0.75)}};
  for (bool rle : {true, false}) {
    const auto f = predictions_from_json(predictions_to_json(ps, rle, {{3, {0.5, -1}}}));
    EXPECT_EQ(f.sequence_id, "scene");
    ASSERT_EQ(f.instances.size(), 1u);
    EXPECT_EQ(f.instances[0].per_stage_points, ps.instances[0].per_stage_points);
    EXPECT_EQ(f.instances[0].confidence, 0.75);
    EXPECT_EQ(f.features.at(3), (std::vector<double>{0.5, -1}));
  }
}

TEST(Predictions, Errors) {
  EXPECT_EQ(code_of([] { predictions_from_json(Json{{"schema_version", 99}, {"sequence_id", "s"}}); }),
            ErrorCode::unsupported_format);
  EXPECT_EQ(code_of([] { predictions_from_json(Json{{"schema_version", 1}}); }), ErrorCode::parse_failure);
  const Json bad_key = {{"schema_version", 1},
                        {"sequence_id", "s"},
                        {"instances", {{{"instance_id", 0}, {"class_id", 0}, {"masks", {{"x", {1}}}}}}}};
  EXPECT_EQ(code_of([&] { predictions_from_json(bad_key); }), ErrorCode::parse_failure);
}

TEST(Predictions, StageSetNeedsOneStage) {
  PredictionFile f;
  f.instances = {support::mask(0, 0, {{0, {1}}, {1, {2}}})};
  EXPECT_THROW(f.to_stage_set(), Error);
  f.instances = {support::mask(0, 0, {{1, {2}}})};
  EXPECT_EQ(f.to_stage_set().stage, 1);
}

TEST(Manifest, RoundTrip) {
  TempDir dir;
  auto seq = support::line_sequence({6, 4}, "room");
  seq.stages[0].colors = std::vector<Rgb>(6, Rgb{0.2f, 0.4f, 0.6f});
  GroundTruthAnnotation gt;
  gt.instances = {support::mask(1, 2, {{0, {0, 1}}, {1, {3}}}), support::mask(5, 0, {{0, {4}}}),
                  support::mask(6, 0, {{0, {5}}})};
  gt.ambiguous_groups = {{0, {5, 6}}};
  gt.change_labels = {{1, ChangeType::rigid}, {5, ChangeType::ambiguous}, {6, ChangeType::ambiguous}};
  const auto manifest = write_sequence(dir.path(), seq, gt);
  const auto back = load_sequence(manifest);
  EXPECT_EQ(back.sequence.sequence_id, "room");
  ASSERT_EQ(back.sequence.stage_count(), 2);
  EXPECT_EQ(back.sequence.stages[1].point_count(), 4u);
  ASSERT_EQ(back.annotation.instances.size(), 3u);
  for (const auto& m : gt.instances) {
    const auto* b = back.annotation.find(m.instance_id);
    ASSERT_NE(b, nullptr);
    EXPECT_EQ(b->class_id, m.class_id);
    EXPECT_EQ(b->per_stage_points, m.per_stage_points);
  }
  EXPECT_EQ(back.annotation.ambiguous_groups[0].member_instance_ids, (std::vector<InstanceId>{5, 6}));
  EXPECT_EQ(back.annotation.change_labels, gt.change_labels);
}

TEST(Manifest, Errors) {
  TempDir dir;
  EXPECT_EQ(code_of([&] { load_sequence(dir.path() / "missing.json"); }), ErrorCode::io_failure);
  auto seq = support::line_sequence({3});
  GroundTruthAnnotation gt{{support::mask(1, 0, {{0, {0}}})}, {}, {}};
  const auto manifest = write_sequence(dir.path(), seq, gt);
  write_text(dir.path() / "stage_0_instances.txt", "1\n-1\n");
  EXPECT_EQ(code_of([&] { load_sequence(manifest); }), ErrorCode::dimension_mismatch);
  write_text(dir.path() / "stage_0_instances.txt", "1\nx\n-1\n");
  EXPECT_EQ(code_of([&] { load_sequence(manifest); }), ErrorCode::parse_failure);
  write_text(dir.path() / "manifest.json", "{ not json");
  EXPECT_EQ(code_of([&] { load_sequence(manifest); }), ErrorCode::parse_failure);
}

TEST(Report, StableJsonWithSchemaVersion) {
  auto seq = support::line_sequence({20, 20});
  GroundTruthAnnotation gt{{support::mask(1, 0, {{0, support::range(0, 5)}, {1, support::range(0, 5)}}),
                            support::mask(2, 3, {{0, support::range(5, 9)}})},
                           {},
                           {{1, ChangeType::static_object}}};
  PredictionSet ps{"seq", {support::mask(0, 0, {{0, support::range(0, 5)}, {1, support::range(0, 4)}}, 0.7),
                           support::mask(1, 1, {{0, support::range(10, 12)}}, 0.2)}};
  const auto a = dump_json(report_to_json(evaluate(seq, gt, ps), true));
  const auto b = dump_json(report_to_json(evaluate(seq, gt, ps), true));
  EXPECT_EQ(a, b);
  const auto j = Json::parse(a);
  EXPECT_EQ(j.at("schema_version"), kSchemaVersion);
  std::vector<int> classes;
  for (const auto& c : j.at("per_class")) classes.push_back(c.at("class_id"));
  EXPECT_EQ(classes, (std::vector<int>{0, 1, 3}));
  EXPECT_EQ(j.at("per_class")[1].at("ap"), 0.0);
  EXPECT_EQ(j.at("per_class")[0].at("per_threshold").size(), 11u);
  EXPECT_TRUE(j.at("per_change_recall").contains("static"));
  EXPECT_EQ(a.back(), '\n');
}

TEST(Recipe, ParsesExplicitAndRandom) {
  const Json j = Json::parse(R"({
    "schema_version": 1, "seed": 3, "sequence_id": "toy", "n_stages": 3,
    "objects": [
      {"shape": "box", "size": [0.4, 0.4, 0.6], "class_id": 2, "points": 50,
       "changes": [{"type": "rigid", "translation": [1, 0, 0]}, {"type": "static"}]},
      {"shape": "sphere", "size": 0.5, "points": 40, "position": [3, 3, 0.3]}
    ]})");
  const auto r = recipe_from_json(j);
  EXPECT_EQ(r.sequence_id, "toy");
  EXPECT_EQ(r.n_stages, 3);
  ASSERT_EQ(r.objects.size(), 2u);
  EXPECT_EQ(r.objects[0].changes[0].kind, ChangeKind::rigid);
  EXPECT_EQ(r.objects[0].changes[0].translation, (Vec3{1, 0, 0}));
  EXPECT_EQ(r.objects[1].shape, Shape::sphere);
  EXPECT_EQ(r.objects[1].size[0], 0.5);
  EXPECT_TRUE(r.objects[1].position.has_value());
  const auto rr = recipe_from_json(Json::parse(R"({"schema_version": 1, "seed": 8, "random": {"n_objects": 4}})"));
  EXPECT_EQ(rr.objects.size(), 4u);
  EXPECT_THROW(recipe_from_json(Json::parse(R"({"schema_version": 1, "objects": [{"changes": [{"type": "warp"}]}]})")),
               Error);
}
