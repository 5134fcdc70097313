#include "grca/objective.hpp"

#include <algorithm>
#include <cmath>

namespace grca {

void SparseVector::add(std::size_t offset, const Eigen::Ref<const Eigen::VectorXd>& values,
                       double scale) {
  if (values.size() == 0) return;
  auto it = blocks_.find(offset);
  if (it == blocks_.end()) {
    blocks_.emplace(offset, scale * values);
    return;
  }
  if (it->second.size() != values.size()) throw Error("sparse vector: block size mismatch");
  it->second += scale * values;
}

void SparseVector::add(const SparseVector& other, double scale) {
  for (const auto& [offset, values] : other.blocks_) add(offset, values, scale);
}

double SparseVector::dot(const SparseVector& other) const {
  double acc = 0.0;
  for (const auto& [offset, values] : blocks_) {
    const auto it = other.blocks_.find(offset);
    if (it != other.blocks_.end()) acc += values.dot(it->second);
  }
  return acc;
}

double SparseVector::squared_norm() const {
  double acc = 0.0;
  for (const auto& [offset, values] : blocks_) acc += values.squaredNorm();
  return acc;
}

double SparseVector::max_abs_diff(const SparseVector& other) const {
  double worst = 0.0;
  for (const auto& [offset, values] : blocks_) {
    const auto it = other.blocks_.find(offset);
    const double d = it == other.blocks_.end() ? values.cwiseAbs().maxCoeff()
                                               : (values - it->second).cwiseAbs().maxCoeff();
    worst = std::max(worst, d);
  }
  for (const auto& [offset, values] : other.blocks_) {
    if (!blocks_.contains(offset)) worst = std::max(worst, values.cwiseAbs().maxCoeff());
  }
  return worst;
}

SparseVector SparseVector::scaled(double s) const {
  SparseVector out;
  for (const auto& [offset, values] : blocks_) out.blocks_.emplace(offset, s * values);
  return out;
}

std::vector<double> policy_ratio(const LogProbTrace& trace) {
  if (trace.logp_new.size() != trace.logp_old.size()) throw Error("invalid trace");
  std::vector<double> out(trace.logp_new.size());
  for (std::size_t t = 0; t < out.size(); ++t) {
    const double a = trace.logp_new[t];
    const double b = trace.logp_old[t];
    if (!std::isfinite(a) || !std::isfinite(b)) throw Error("invalid trace");
    out[t] = std::exp(a - b);
  }
  return out;
}

SurrogateEvaluation evaluate_surrogate(std::span<const GroupRollout> groups,
                                       std::span<const RoutedAdvantages> advantages,
                                       double clip_eps) {
  if (!(clip_eps > 0.0)) throw Error("clip_eps must be positive");
  if (groups.size() != advantages.size()) throw Error("surrogate: groups/advantages mismatch");

  SurrogateEvaluation out;
  std::size_t members = 0;
  for (const auto& g : groups) members += g.members.size();
  if (members == 0) return out;
  const double member_weight = 1.0 / static_cast<double>(members);

  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const GroupRollout& group = groups[gi];
    const RoutedAdvantages& adv = advantages[gi];
    if (adv.per_token.size() != group.members.size()) {
      throw Error("surrogate: advantage/member count mismatch");
    }
    for (std::size_t i = 0; i < group.members.size(); ++i) {
      const auto ratio = policy_ratio(group.members[i].trace);
      const auto& a = adv.per_token[i];
      if (a.size() != ratio.size()) throw Error("surrogate: length mismatch");
      auto& grad = out.dlogp.emplace_back(ratio.size(), 0.0);
      if (ratio.empty()) continue;
      const double w = member_weight / static_cast<double>(ratio.size());
      double sum = 0.0;
      for (std::size_t t = 0; t < ratio.size(); ++t) {
        const double r = ratio[t];
        const double unclipped = r * a[t];
        const double clipped = std::clamp(r, 1.0 - clip_eps, 1.0 + clip_eps) * a[t];
        if (unclipped <= clipped) {
          sum += unclipped;
          grad[t] = w * unclipped;  // d(r A)/d logp_new = r A
        } else {
          sum += clipped;
          ++out.clipped_tokens;
        }
      }
      out.total_tokens += ratio.size();
      out.value += w * sum;
    }
  }
  return out;
}

double clipped_surrogate(std::span<const GroupRollout> groups,
                         std::span<const RoutedAdvantages> advantages, double clip_eps) {
  return evaluate_surrogate(groups, advantages, clip_eps).value;
}

SparseVector restricted_score(const LogProbTrace& trace, std::span<const std::size_t> tokens) {
  if (!trace.scores) throw Error("scores unavailable");
  const auto& scores = *trace.scores;
  SparseVector out;
  for (const std::size_t t : tokens) {
    if (t >= scores.size()) throw Error("restricted score: token index out of range");
    out.add(scores[t].offset, scores[t].values);
  }
  return out;
}

double decomposition_error(const AnalysisSample& s) {
  SparseVector rhs = s.routed_term();
  rhs.add(s.residual_term());
  const SparseVector lhs = s.broadcast_term();
  double scale = 0.0;
  for (const auto& [offset, values] : lhs.blocks()) {
    scale = std::max(scale, values.cwiseAbs().maxCoeff());
  }
  const double diff = lhs.max_abs_diff(rhs);
  return scale > 0.0 ? diff / scale : diff;
}

void VarianceAccumulator::add(const AnalysisSample& s) {
  const SparseVector broad = s.broadcast_term();
  const SparseVector route = s.routed_term();
  const SparseVector resid = s.residual_term();
  sum_broad_.add(broad);
  sum_route_.add(route);
  sum_resid_.add(resid);
  sq_broad_ += broad.squared_norm();
  sq_route_ += route.squared_norm();
  sq_resid_ += resid.squared_norm();
  cross_ += route.dot(resid);
  ++n_;
}

VarianceReport VarianceAccumulator::report() const {
  if (n_ < 2) throw Error("variance analysis needs at least 2 samples");
  const double n = static_cast<double>(n_);
  const double dof = n - 1.0;
  VarianceReport r;
  r.n_samples = n_;
  r.var_broadcast = (sq_broad_ - sum_broad_.squared_norm() / n) / dof;
  r.var_routed = (sq_route_ - sum_route_.squared_norm() / n) / dof;
  r.var_residual = (sq_resid_ - sum_resid_.squared_norm() / n) / dof;
  r.scov = (cross_ - sum_route_.dot(sum_resid_) / n) / dof;
  const double gap = std::abs(r.var_broadcast - (r.var_routed + r.var_residual + 2.0 * r.scov));
  r.identity_residual = r.var_broadcast > 0.0 ? gap / r.var_broadcast : gap;
  r.mean_residual_norm = std::sqrt(sum_resid_.squared_norm()) / n;
  r.mean_residual_stderr = std::sqrt(std::max(r.var_residual, 0.0) / n);
  return r;
}

VarianceReport variance_analysis(std::span<const AnalysisSample> samples) {
  VarianceAccumulator acc;
  for (const auto& s : samples) acc.add(s);
  return acc.report();
}

}  // namespace grca
