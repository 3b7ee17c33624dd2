// Copyright 2026 The arwkv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "arwkv/autodiff.hpp"

namespace arwkv {

struct GradcheckEntry {
  std::string name;
  Index coords_checked = 0;
  double max_rel_err = 0.0;
  Index worst_coord = -1;
};

struct GradcheckReport {
  double max_rel_err = 0.0;
  bool pass = false;
  std::vector<GradcheckEntry> entries;
  /// Empty on success; otherwise names the input/coordinate or the NaN source.
  std::string failure;
};

struct GradcheckOptions {
  double h = 1e-5;
  double tol = 1e-6;
  /// 0 checks every coordinate; otherwise an evenly strided subset per leaf.
  Index max_coords_per_leaf = 0;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences, coordinate by coordinate. rel err = |a - n| / max(1, |a|, |n|).
/// `leaves` are perturbed in place and restored; `f` must read them.
GradcheckReport gradcheck_leaves(const std::function<Var<double>()>& f, std::vector<Var<double>> leaves,
                                 const GradcheckOptions& opts = {});

/// Convenience form: `f` receives fresh leaf Vars built from `inputs`.
GradcheckReport gradcheck(const std::function<Var<double>(const std::vector<Var<double>>&)>& f,
                          const std::vector<Tensor<double>>& inputs, const GradcheckOptions& opts = {},
                          const std::vector<std::string>& names = {});

}  // namespace arwkv
