#pragma once

#include <vector>

#include "rfvoice/nn/graph.hpp"

namespace rfvoice::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 5.0;  // global L2 norm; <= 0 disables clipping
};

struct AdamState {
  AdamConfig cfg;
  long step = 0;
  std::vector<Mat> m;
  std::vector<Mat> v;

  AdamState() = default;
  AdamState(const AdamConfig& c, const ParamSet& params);
};

// Clips the gradients in `params` to the global norm, then applies one
// bias-corrected Adam update to the values. Returns the pre-clip norm.
// Throws DivergenceError on a non-finite gradient and ArgumentError when the
// state was built for different shapes.
double adam_step(ParamSet& params, AdamState& state);

}  // namespace rfvoice::nn
