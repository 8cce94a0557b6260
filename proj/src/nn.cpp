#include "ocnet/nn.hpp"

#include <cmath>

#include "ocnet/errors.hpp"

namespace ocnet {

Conv2dLayer Conv2dLayer::create(int cin, int cout, int k, int stride, int pad, int groups,
                                Rng& rng) {
  if (groups < 1 || cin % groups != 0 || cout % groups != 0) {
    throw ConfigError("conv layer: cin=" + std::to_string(cin) + " cout=" +
                      std::to_string(cout) + " not divisible by groups=" +
                      std::to_string(groups));
  }
  Conv2dLayer layer;
  layer.stride = stride;
  layer.pad = pad;
  layer.groups = groups;
  const int cig = cin / groups;
  Tensor w({cout, cig, k, k});
  const double std = std::sqrt(2.0 / (static_cast<double>(cig) * k * k));
  for (std::int64_t i = 0; i < w.size(); ++i) w[i] = rng.normal(0.0, std);
  layer.w = ag::leaf(std::move(w));
  layer.b = ag::leaf(Tensor({cout}, 0.0));
  return layer;
}

void Conv2dLayer::collect(const std::string& prefix, NamedVars& params,
                          NamedTensors& tensors) {
  params.emplace_back(prefix + ".w", w);
  params.emplace_back(prefix + ".b", b);
  tensors.emplace_back(prefix + ".w", &w.node()->value);
  tensors.emplace_back(prefix + ".b", &b.node()->value);
}

LinearLayer LinearLayer::create(int in, int out, Rng& rng, double init_std) {
  LinearLayer layer;
  const double std = init_std > 0.0 ? init_std
                                    : std::sqrt(2.0 / static_cast<double>(in + out));
  Tensor w({out, in});
  for (std::int64_t i = 0; i < w.size(); ++i) w[i] = rng.normal(0.0, std);
  layer.w = ag::leaf(std::move(w));
  layer.b = ag::leaf(Tensor({out}, 0.0));
  return layer;
}

void LinearLayer::collect(const std::string& prefix, NamedVars& params,
                          NamedTensors& tensors) {
  params.emplace_back(prefix + ".w", w);
  params.emplace_back(prefix + ".b", b);
  tensors.emplace_back(prefix + ".w", &w.node()->value);
  tensors.emplace_back(prefix + ".b", &b.node()->value);
}

BatchNorm1dLayer BatchNorm1dLayer::create(int dim) {
  BatchNorm1dLayer layer;
  layer.gamma = ag::leaf(Tensor({dim}, 1.0));
  layer.beta = ag::leaf(Tensor({dim}, 0.0));
  layer.state.running_mean = Tensor({dim}, 0.0);
  layer.state.running_var = Tensor({dim}, 1.0);
  layer.state.initialized = true;
  return layer;
}

void BatchNorm1dLayer::collect(const std::string& prefix, NamedVars& params,
                               NamedTensors& tensors) {
  params.emplace_back(prefix + ".gamma", gamma);
  params.emplace_back(prefix + ".beta", beta);
  tensors.emplace_back(prefix + ".gamma", &gamma.node()->value);
  tensors.emplace_back(prefix + ".beta", &beta.node()->value);
  tensors.emplace_back(prefix + ".running_mean", &state.running_mean);
  tensors.emplace_back(prefix + ".running_var", &state.running_var);
}

}  // namespace ocnet
