#pragma once

#include <span>
#include <vector>

#include "posefield/field.hpp"
#include "posefield/lie.hpp"

namespace posefield {

// Mean over rays of the squared L2 color error. Empty batch -> 0.
double photometric_loss(std::span<const Vec3> rendered, std::span<const Vec3> target);

// (1/M) sum (|grad f| - 1)^2 over the sample points.
double eikonal_loss(const FieldModel& model, std::span<const Vec3> points, double alpha);

// Mean squared specular magnitude over samples. Empty batch -> 0.
double specular_loss(std::span<const Vec3> specular);

// Mean binary entropy of the rendering weights, clamped to
// [1e-7, 1 - 1e-7] before the logs.
double entropy_loss(std::span<const double> weights);

struct LossParts {
  double photometric = 0.0;
  double eikonal = 0.0;
  double specular = 0.0;
  double entropy = 0.0;
};
struct LossWeights {
  double photometric = 1.0;
  double eikonal = 0.1;
  double specular = 1e-4;
  double entropy = 1e-3;
};

// Weighted sum; throws NumericalError on non-finite parts so a training
// step can abort with a diagnostic.
double total_loss(const LossParts& parts, const LossWeights& weights);

}  // namespace posefield
