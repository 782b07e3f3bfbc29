#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "support.hpp"
#include "t4d/core.hpp"

using namespace t4d;
using support::mask;
using support::range;

namespace {

struct Fixture {
  SequencePointCloud seq = support::line_sequence({10, 10});
  GroundTruthAnnotation gt;

  Fixture() {
    gt.instances = {mask(1, 0, {{0, range(0, 3)}, {1, range(0, 3)}}),
                    mask(2, 0, {{0, range(3, 6)}, {1, range(3, 6)}}),
                    mask(3, 1, {{0, range(6, 9)}})};
    gt.change_labels = {{1, ChangeType::static_object}, {3, ChangeType::added_removed}};
  }
};

bool has_message(const ValidationResult& r, const std::string& text) {
  for (const auto& v : r.violations)
    if (v.message.find(text) != std::string::npos) return true;
  return false;
}

}  // namespace

TEST(Validate, WellFormedSequenceIsOk) {
  Fixture f;
  const auto r = validate_sequence(f.seq, f.gt, {mask(0, 0, {{0, range(0, 3)}}, 0.7)});
  EXPECT_TRUE(r.ok());
}

TEST(Validate, StageIndexEqualToTIsOutOfRange) {
  Fixture f;
  f.gt.instances[0].per_stage_points[2] = {0};
  const auto r = validate_sequence(f.seq, f.gt, {});
  EXPECT_TRUE(r.has(ViolationCode::stage_out_of_range));
  EXPECT_TRUE(has_message(r, "stage out of range"));
}

TEST(Validate, CrossClassGroup) {
  Fixture f;
  f.gt.ambiguous_groups = {{0, {1, 3}}};
  const auto r = validate_sequence(f.seq, f.gt, {});
  EXPECT_TRUE(r.has(ViolationCode::cross_class_group));
  EXPECT_TRUE(has_message(r, "cross-class ambiguous group"));
}

TEST(Validate, PointProblems) {
  Fixture f;
  const auto r = validate_sequence(f.seq, f.gt,
                                   {mask(0, 0, {{0, {10}}}), mask(1, 0, {{0, {2, 1}}}), mask(2, 0, {{1, {4, 4}}})});
  EXPECT_TRUE(r.has(ViolationCode::point_out_of_range));
  EXPECT_TRUE(r.has(ViolationCode::unsorted_points));
  EXPECT_TRUE(r.has(ViolationCode::duplicate_point));
}

TEST(Validate, EmptyMaskAndDuplicateIds) {
  Fixture f;
  f.gt.instances.push_back(mask(1, 0, {}));
  const auto r = validate_sequence(f.seq, f.gt, {mask(5, 0, {{0, {}}})});
  EXPECT_TRUE(r.has(ViolationCode::empty_mask));
  EXPECT_TRUE(r.has(ViolationCode::duplicate_instance_id));
}

TEST(Validate, GroupMembership) {
  Fixture f;
  f.gt.ambiguous_groups = {{0, {1, 2}}, {1, {2, 99}}, {2, {1}}};
  const auto r = validate_sequence(f.seq, f.gt, {});
  EXPECT_TRUE(r.has(ViolationCode::member_in_multiple_groups));
  EXPECT_TRUE(r.has(ViolationCode::unknown_group_member));
  EXPECT_TRUE(r.has(ViolationCode::group_too_small));
}

TEST(Validate, SequenceLevelProblems) {
  GroundTruthAnnotation gt;
  EXPECT_TRUE(validate_sequence(SequencePointCloud{}, gt, {}).has(ViolationCode::empty_sequence));

  auto seq = support::line_sequence({3, 0});
  seq.stages[0].colors = std::vector<Rgb>(2);
  seq.stages[0].positions[1][2] = std::numeric_limits<double>::quiet_NaN();
  gt.change_labels[42] = ChangeType::rigid;
  const auto r = validate_sequence(seq, gt, {mask(0, 0, {{0, {0}}}, 1.5)});
  EXPECT_TRUE(r.has(ViolationCode::empty_stage));
  EXPECT_TRUE(r.has(ViolationCode::attribute_length_mismatch));
  EXPECT_TRUE(r.has(ViolationCode::non_finite_coordinate));
  EXPECT_TRUE(r.has(ViolationCode::confidence_out_of_range));
  EXPECT_TRUE(r.has(ViolationCode::unknown_labeled_instance));
}

TEST(Validate, NeverThrowsOnGarbage) {
  SequencePointCloud seq;
  seq.stages.resize(2);
  GroundTruthAnnotation gt;
  gt.instances = {mask(1, 0, {{-3, {5, 5}}, {7, {}}})};
  gt.ambiguous_groups = {{0, {}}, {1, {1, 1}}};
  EXPECT_NO_THROW(validate_sequence(seq, gt, gt.instances));
}

TEST(ChangeTypes, StringRoundTrip) {
  for (auto c : kAllChangeTypes) EXPECT_EQ(change_type_from_string(to_string(c)), c);
  EXPECT_THROW(change_type_from_string("moved"), Error);
}

TEST(InstanceMask, EmptyStageCountsAsAbsent) {
  auto m = mask(1, 0, {{0, {}}, {1, {3}}});
  EXPECT_FALSE(m.present_at(0));
  EXPECT_TRUE(m.present_at(1));
  EXPECT_EQ(m.size(), 1u);
}
