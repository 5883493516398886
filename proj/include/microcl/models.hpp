#pragma once

#include "microcl/net.hpp"

#include <string>
#include <vector>

namespace microcl {

/// Small five-stage CNN standing in for a large backbone. Stage i is
/// conv{i} + relu "stage{i}" (+ maxpool for i < 5); stage 5 ends in a global
/// average pool, so the extractor output z has `z_dim` features.
struct BackboneConfig {
  int width = 16;  // stage1 channels; stages 2-4 double it
  int z_dim = 128;

  friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

inline constexpr int kNumClasses = 4;
inline constexpr int kNumStages = 5;

NetSpec extractor_spec(const BackboneConfig& cfg = {});

/// Name of the ReLU output that closes stage `i` (1-based): "stage1".."stage5".
std::string stage_name(int i);
std::vector<std::string> stage_names();

/// dense(z -> hidden) + k-sparse gate + dense(hidden -> v). Output is the
/// unnormalised metric embedding.
NetSpec projection_head_spec(int z_dim, int hidden, double k_percent, int v_dim);

/// dense(z -> hidden) + relu + dense(hidden -> classes) logits.
NetSpec classifier_spec(int z_dim, int hidden, int classes = kNumClasses);

}  // namespace microcl
