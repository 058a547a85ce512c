// Copyright 2026 The turncredit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Per-sequence policy losses. Masks hold 1 for policy tokens and 0 for
// feedback tokens; every reduction is a mean over the unmasked tokens.

#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

#include "turncredit/credit.hpp"

namespace turncredit {

template <typename Scalar>
struct LossAndGrad {
  Scalar loss = 0;
  Vec<Scalar> grad;  // d loss / d (per-token input)
};

/// w_t = exp(new_t - old_t).
template <typename DerivedN, typename DerivedO>
Vec<typename DerivedN::Scalar> importance_ratios(const Eigen::MatrixBase<DerivedN>& new_lp,
                                                 const Eigen::MatrixBase<DerivedO>& old_lp) {
  if (new_lp.size() != old_lp.size()) throw std::invalid_argument("importance_ratios: length mismatch");
  return (new_lp - old_lp).array().exp().matrix();
}

/// Negated clipped objective -mean_t min(w A, clip(w, 1-eps, 1+eps) A) and its
/// gradient with respect to w. Masked tokens get exactly zero gradient.
template <typename DerivedW, typename DerivedA, typename DerivedM>
LossAndGrad<typename DerivedW::Scalar> clipped_surrogate(const Eigen::MatrixBase<DerivedW>& w,
                                                         const Eigen::MatrixBase<DerivedA>& adv,
                                                         const Eigen::MatrixBase<DerivedM>& mask,
                                                         typename DerivedW::Scalar clip_eps) {
  using Scalar = typename DerivedW::Scalar;
  if (w.size() != adv.size() || w.size() != mask.size()) throw std::invalid_argument("clipped_surrogate: length mismatch");
  const Scalar count = mask.sum();
  if (!(count > 0)) throw std::invalid_argument("clipped_surrogate: no unmasked tokens");
  LossAndGrad<Scalar> out;
  out.grad = Vec<Scalar>::Zero(w.size());
  Scalar objective = 0;
  for (Eigen::Index t = 0; t < w.size(); ++t) {
    if (mask(t) == Scalar(0)) continue;
    const Scalar clipped = std::clamp(w(t), Scalar(1) - clip_eps, Scalar(1) + clip_eps);
    const Scalar raw_term = w(t) * adv(t);
    const Scalar clip_term = clipped * adv(t);
    objective += mask(t) * std::min(raw_term, clip_term);
    const bool inside = w(t) >= Scalar(1) - clip_eps && w(t) <= Scalar(1) + clip_eps;
    if (inside || raw_term < clip_term) out.grad(t) = -mask(t) * adv(t) / count;
  }
  out.loss = -objective / count;
  return out;
}

/// beta * mean_t [exp(ref - lp) - (ref - lp) - 1]; gradient is with respect to lp.
template <typename DerivedL, typename DerivedR, typename DerivedM>
LossAndGrad<typename DerivedL::Scalar> kl_penalty(const Eigen::MatrixBase<DerivedL>& lp,
                                                  const Eigen::MatrixBase<DerivedR>& ref_lp,
                                                  typename DerivedL::Scalar beta,
                                                  const Eigen::MatrixBase<DerivedM>& mask) {
  using Scalar = typename DerivedL::Scalar;
  if (lp.size() != ref_lp.size() || lp.size() != mask.size()) throw std::invalid_argument("kl_penalty: length mismatch");
  LossAndGrad<Scalar> out;
  out.grad = Vec<Scalar>::Zero(lp.size());
  const Scalar count = mask.sum();
  if (!(count > 0) || beta == Scalar(0)) return out;
  const auto diff = (ref_lp - lp).array();
  out.loss = beta * (mask.array() * (diff.exp() - diff - Scalar(1))).sum() / count;
  out.grad = (beta / count * mask.array() * (Scalar(1) - diff.exp())).matrix();
  return out;
}

inline Eigen::VectorXd mask_vector(const std::vector<bool>& mask) {
  Eigen::VectorXd m(static_cast<Eigen::Index>(mask.size()));
  for (std::size_t i = 0; i < mask.size(); ++i) m(static_cast<Eigen::Index>(i)) = mask[i] ? 1.0 : 0.0;
  return m;
}

}  // namespace turncredit
