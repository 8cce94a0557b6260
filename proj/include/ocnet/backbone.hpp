#ifndef OCNET_BACKBONE_HPP_
#define OCNET_BACKBONE_HPP_

#include <cstdint>
#include <vector>

#include "ocnet/nn.hpp"

namespace ocnet {

// Plain convolutional trunk: one 3x3 conv (+ReLU) per stage, stride given by
// the stage's downsampling factor. Produces the backbone map the heads
// consume.
struct BackboneConfig {
  int in_height = 64;
  int in_width = 32;
  std::vector<int> stage_widths = {32, 64, 128};
  std::vector<int> stage_strides = {2, 2, 2};
  std::uint64_t init_seed = 1;

  void validate() const;
  int total_downsampling() const;
  int out_channels() const { return stage_widths.back(); }
  int out_height() const { return in_height / total_downsampling(); }
  int out_width() const { return in_width / total_downsampling(); }
};

class Backbone {
 public:
  explicit Backbone(BackboneConfig cfg);

  // images: [B,3,H,W] in [0,1]-normalized space; returns the feature map
  // [B,C,H',W']. Deterministic given weights and input.
  ag::Var forward(const ag::Var& images) const;

  const BackboneConfig& config() const { return cfg_; }
  void collect(const std::string& prefix, NamedVars& params, NamedTensors& tensors);

 private:
  BackboneConfig cfg_;
  std::vector<Conv2dLayer> stages_;
};

// Spatial average per channel: [B,C,H,W] -> [B,C].
ag::Var global_pool(const ag::Var& map);

}  // namespace ocnet

#endif  // OCNET_BACKBONE_HPP_
