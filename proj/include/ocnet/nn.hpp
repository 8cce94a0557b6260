#ifndef OCNET_NN_HPP_
#define OCNET_NN_HPP_

#include <string>
#include <utility>
#include <vector>

#include "ocnet/autograd.hpp"
#include "ocnet/rng.hpp"

namespace ocnet {

// Named trainable leaves, in registration order (order is part of the
// checkpoint contract).
using NamedVars = std::vector<std::pair<std::string, ag::Var>>;
// Named raw tensors for serialization: parameters plus non-trained state
// such as batch-norm running statistics.
using NamedTensors = std::vector<std::pair<std::string, Tensor*>>;

struct Conv2dLayer {
  ag::Var w;  // [Co, Ci/groups, k, k]
  ag::Var b;  // [Co]
  int stride = 1;
  int pad = 0;
  int groups = 1;

  static Conv2dLayer create(int cin, int cout, int k, int stride, int pad, int groups,
                            Rng& rng);
  ag::Var forward(const ag::Var& x) const {
    return ag::conv2d(x, w, b, stride, pad, groups);
  }
  void collect(const std::string& prefix, NamedVars& params, NamedTensors& tensors);
};

struct LinearLayer {
  ag::Var w;  // [O, I]
  ag::Var b;  // [O]

  static LinearLayer create(int in, int out, Rng& rng, double init_std = -1.0);
  ag::Var forward(const ag::Var& x) const { return ag::linear(x, w, b); }
  void collect(const std::string& prefix, NamedVars& params, NamedTensors& tensors);
};

struct BatchNorm1dLayer {
  ag::Var gamma;
  ag::Var beta;
  ag::BatchNormState state;

  static BatchNorm1dLayer create(int dim);
  ag::Var forward(const ag::Var& x, bool training) {
    return ag::batchnorm1d(x, gamma, beta, state, training);
  }
  void collect(const std::string& prefix, NamedVars& params, NamedTensors& tensors);
};

}  // namespace ocnet

#endif  // OCNET_NN_HPP_
