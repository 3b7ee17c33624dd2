// Copyright 2026 The arwkv Authors
// SPDX-License-Identifier: Apache-2.0

#include "arwkv/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace arwkv {

GradcheckReport gradcheck_leaves(const std::function<Var<double>()>& f, std::vector<Var<double>> leaves,
                                 const GradcheckOptions& opts) {
  GradcheckReport report;
  std::vector<Tensor<double>> analytic;
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    for (auto& v : leaves) v.zero_grad();
    Var<double> loss;
    try {
      loss = f();
    } catch (const NumericError& e) {
      report.failure = std::string("forward: ") + e.what();
      return report;
    }
    tape.backward(loss);
    for (auto& v : leaves) analytic.push_back(v.grad());
  }

  auto eval = [&]() {
    NoGradScope<double> off;
    return f().value().item();
  };

  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Var<double>& leaf = leaves[li];
    GradcheckEntry entry;
    entry.name = leaf.name().empty() ? "input" + std::to_string(li) : leaf.name();
    const Index n = leaf.numel();
    const Index stride =
        opts.max_coords_per_leaf > 0 && n > opts.max_coords_per_leaf ? (n + opts.max_coords_per_leaf - 1) / opts.max_coords_per_leaf : 1;
    for (Index i = 0; i < n; i += stride) {
      double& slot = leaf.mutable_value()[i];
      const double orig = slot;
      slot = orig + opts.h;
      const double fp = eval();
      slot = orig - opts.h;
      const double fm = eval();
      slot = orig;
      const double num = (fp - fm) / (2.0 * opts.h);
      const double ana = analytic[li][i];
      if (!std::isfinite(num) || !std::isfinite(ana)) {
        report.failure = entry.name + "[" + std::to_string(i) + "]: non-finite gradient (analytic " +
                         std::to_string(ana) + ", numeric " + std::to_string(num) + ")";
        report.entries.push_back(entry);
        report.pass = false;
        return report;
      }
      const double rel = std::abs(ana - num) / std::max({1.0, std::abs(ana), std::abs(num)});
      ++entry.coords_checked;
      if (rel > entry.max_rel_err) {
        entry.max_rel_err = rel;
        entry.worst_coord = i;
      }
    }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    if (entry.max_rel_err >= opts.tol && report.failure.empty())
      report.failure = entry.name + "[" + std::to_string(entry.worst_coord) + "]: rel err " +
                       std::to_string(entry.max_rel_err) + " >= tol " + std::to_string(opts.tol);
    report.entries.push_back(entry);
  }
  report.pass = report.failure.empty();
  return report;
}

GradcheckReport gradcheck(const std::function<Var<double>(const std::vector<Var<double>>&)>& f,
                          const std::vector<Tensor<double>>& inputs, const GradcheckOptions& opts,
                          const std::vector<std::string>& names) {
  std::vector<Var<double>> leaves;
  leaves.reserve(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i)
    leaves.emplace_back(inputs[i], true, i < names.size() ? names[i] : "input" + std::to_string(i));
  return gradcheck_leaves([&]() { return f(leaves); }, leaves, opts);
}

}  // namespace arwkv
