#include "microcl/models.hpp"

namespace microcl {

std::string stage_name(int i) { return "stage" + std::to_string(i); }

std::vector<std::string> stage_names() {
  std::vector<std::string> names;
  for (int i = 1; i <= kNumStages; ++i) names.push_back(stage_name(i));
  return names;
}

NetSpec extractor_spec(const BackboneConfig& cfg) {
  NetSpec net;
  int in = 3;
  for (int i = 1; i <= kNumStages; ++i) {
    const int out = i < kNumStages ? cfg.width << (i - 1) : cfg.z_dim;
    net.push_back(LayerSpec::conv2d("conv" + std::to_string(i), in, out, 3));
    net.push_back(LayerSpec::relu(stage_name(i)));
    if (i < kNumStages)
      net.push_back(LayerSpec::maxpool2d("pool" + std::to_string(i)));
    else
      net.push_back(LayerSpec::avgpool_global("gap"));
    in = out;
  }
  validate(net);
  return net;
}

NetSpec projection_head_spec(int z_dim, int hidden, double k_percent, int v_dim) {
  NetSpec net{LayerSpec::dense("head.fc1", z_dim, hidden), LayerSpec::ksparse("head.ksparse", k_percent),
              LayerSpec::dense("head.fc2", hidden, v_dim)};
  validate(net);
  return net;
}

NetSpec classifier_spec(int z_dim, int hidden, int classes) {
  NetSpec net{LayerSpec::dense("cls.fc1", z_dim, hidden), LayerSpec::relu("cls.relu"),
              LayerSpec::dense("cls.fc2", hidden, classes)};
  validate(net);
  return net;
}

}  // namespace microcl
