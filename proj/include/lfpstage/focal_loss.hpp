#pragma once

#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "dataset_io.hpp"
#include "error.hpp"
#include "math.hpp"

namespace lfpstage {

inline constexpr double kMinProb = 1e-12;

struct FocalLossConfig {
  double gamma = 2.0;
  std::array<double, kNumClasses> alpha{1.0, 1.0, 1.0, 1.0};
};

inline void validate(const FocalLossConfig& cfg) {
  if (!(cfg.gamma >= 0.0)) throw config_error("focal loss gamma must be >= 0");
  for (double a : cfg.alpha)
    if (!(a > 0.0)) throw config_error("focal loss class weights must be > 0");
}

// FL = -alpha_y (1 - p_y)^gamma log(p_y), with p_y clamped to [1e-12, 1].
template <typename S>
S focal_loss(const Vector<S>& probs, Label4 label, const FocalLossConfig& cfg) {
  const std::size_t y = index(label);
  if (y >= kNumClasses || static_cast<std::size_t>(probs.size()) != kNumClasses)
    throw data_error("focal loss: invalid label or probability vector");
  const S p = std::clamp(probs[static_cast<Eigen::Index>(y)], S(kMinProb), S(1));
  if (p == S(1)) return S(0);
  const S alpha = static_cast<S>(cfg.alpha[y]);
  return -alpha * std::pow(S(1) - p, static_cast<S>(cfg.gamma)) * std::log(p);
}

inline double focal_loss(std::span<const double> probs, Label4 label, const FocalLossConfig& cfg) {
  Vector<double> v(static_cast<Eigen::Index>(probs.size()));
  for (std::size_t i = 0; i < probs.size(); ++i) v[static_cast<Eigen::Index>(i)] = probs[i];
  return focal_loss<double>(v, label, cfg);
}

// dFL/dlogits where probs = softmax(logits).
template <typename S>
Vector<S> focal_loss_grad_logits(const Vector<S>& probs, Label4 label, const FocalLossConfig& cfg) {
  const auto y = static_cast<Eigen::Index>(index(label));
  Vector<S> grad = Vector<S>::Zero(probs.size());
  const S p_raw = probs[y];
  const S p = std::clamp(p_raw, S(kMinProb), S(1));
  if (p == S(1)) return grad;
  const S alpha = static_cast<S>(cfg.alpha[static_cast<std::size_t>(y)]);
  const S gamma = static_cast<S>(cfg.gamma);
  const S one_minus = S(1) - p;
  S d_p = std::pow(one_minus, gamma) / p;
  if (gamma != S(0)) d_p -= gamma * std::pow(one_minus, gamma - S(1)) * std::log(p);
  d_p *= -alpha;
  // dp_y/dlogit_k = p_y (delta_ky - probs_k)
  for (Eigen::Index k = 0; k < probs.size(); ++k) grad[k] = d_p * p_raw * ((k == y ? S(1) : S(0)) - probs[k]);
  return grad;
}

}  // namespace lfpstage
