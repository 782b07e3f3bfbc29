#pragma once

#include <initializer_list>
#include <map>
#include <numeric>
#include <vector>

#include "t4d/core.hpp"

namespace support {

using namespace t4d;

/// n points spaced 1 m apart along x.
inline StageCloud line_cloud(std::size_t n) {
  StageCloud s;
  for (std::size_t i = 0; i < n; ++i) s.positions.push_back({static_cast<double>(i), 0.0, 0.0});
  return s;
}

inline SequencePointCloud line_sequence(std::initializer_list<std::size_t> counts, std::string id = "seq") {
  SequencePointCloud seq;
  seq.sequence_id = std::move(id);
  for (auto n : counts) seq.stages.push_back(line_cloud(n));
  return seq;
}

inline std::vector<PointIndex> range(PointIndex lo, PointIndex hi) {
  std::vector<PointIndex> v(hi - lo);
  std::iota(v.begin(), v.end(), lo);
  return v;
}

inline InstanceMask mask(InstanceId id, ClassId c, std::map<StageIndex, std::vector<PointIndex>> pts,
                         double confidence = 1.0) {
  return {id, c, std::move(pts), confidence};
}

}  // namespace support
