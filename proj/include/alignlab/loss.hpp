#pragma once

#include "alignlab/core.hpp"

#include <cmath>
#include <string>
#include <string_view>

namespace alignlab {

enum class LossKind { half_square, logistic };

/// Pointwise loss l(yhat, y) and its derivative in yhat.
///
/// half_square: l = (yhat - y)^2 / 2. logistic: l = ln(1 + exp(-yhat y)).
/// Both derivatives are 1-Lipschitz (logistic for |y| <= 2) and nonzero at
/// yhat = 0 whenever y != 0.
struct LossModel {
  LossKind kind = LossKind::half_square;

  double value(double yhat, double y) const {
    switch (kind) {
      case LossKind::half_square:
        return 0.5 * (yhat - y) * (yhat - y);
      case LossKind::logistic: {
        const double z = -yhat * y;
        return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
      }
    }
    return 0.0;
  }

  double derivative(double yhat, double y) const {
    switch (kind) {
      case LossKind::half_square:
        return yhat - y;
      case LossKind::logistic: {
        const double z = yhat * y;
        // -y / (1 + e^z), written to stay finite for large |z|.
        return z > 0.0 ? -y * std::exp(-z) / (1.0 + std::exp(-z)) : -y / (1.0 + std::exp(z));
      }
    }
    return 0.0;
  }

  friend bool operator==(const LossModel&, const LossModel&) = default;
};

inline std::string_view to_string(LossKind kind) {
  return kind == LossKind::half_square ? "half-square" : "logistic";
}

inline LossKind parse_loss_kind(std::string_view s) {
  if (s == "half-square" || s == "square") return LossKind::half_square;
  if (s == "logistic") return LossKind::logistic;
  throw ConfigError("unknown loss kind: " + std::string(s));
}

}  // namespace alignlab
