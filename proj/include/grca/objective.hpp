#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "grca/credit.hpp"
#include "grca/trace.hpp"

namespace grca {

inline constexpr double kDefaultClipEps = 0.2;

/// exp(logp_new - logp_old) per token. Throws Error "invalid trace" on
/// non-finite log-probabilities or mismatched lengths.
std::vector<double> policy_ratio(const LogProbTrace& trace);

struct SurrogateEvaluation {
  double value = 0.0;
  /// d value / d logp_new[t] for every member of every group, in order.
  std::vector<std::vector<double>> dlogp;
  std::size_t clipped_tokens = 0;
  std::size_t total_tokens = 0;
};

/// Mean over members of the token-mean clipped surrogate
///   (1/L_i) sum_t min(r_t A_t, clip(r_t, 1-eps, 1+eps) A_t)
/// together with its exact derivative with respect to each logp_new.
SurrogateEvaluation evaluate_surrogate(std::span<const GroupRollout> groups,
                                       std::span<const RoutedAdvantages> advantages,
                                       double clip_eps = kDefaultClipEps);

double clipped_surrogate(std::span<const GroupRollout> groups,
                         std::span<const RoutedAdvantages> advantages,
                         double clip_eps = kDefaultClipEps);

/// Sum of per-token scores over the given token indices. Throws Error
/// "scores unavailable" when the trace carries no scores.
SparseVector restricted_score(const LogProbTrace& trace, std::span<const std::size_t> tokens);

/// One sampled output's contribution to the span-restricted gradient of a
/// single field under broadcast and routed credit.
struct AnalysisSample {
  SparseVector score;       // score restricted to the field's span
  double broadcast_adv = 0;  // sequence-level advantage
  double routed_adv = 0;     // field advantage

  double residual() const { return broadcast_adv - routed_adv; }
  SparseVector broadcast_term() const { return score.scaled(broadcast_adv); }
  SparseVector routed_term() const { return score.scaled(routed_adv); }
  SparseVector residual_term() const { return score.scaled(residual()); }
};

/// Relative violation of broadcast_term == routed_term + residual_term.
double decomposition_error(const AnalysisSample& s);

struct VarianceReport {
  double var_broadcast = 0;
  double var_routed = 0;
  double var_residual = 0;
  double scov = 0;
  /// |var_broadcast - (var_routed + var_residual + 2 scov)| / var_broadcast.
  double identity_residual = 0;
  std::size_t n_samples = 0;
  /// Norm of the empirical mean of residual_term and its standard error.
  double mean_residual_norm = 0;
  double mean_residual_stderr = 0;

  bool broadcast_exceeds_routed() const { return var_broadcast > var_routed; }
  bool scov_nonnegative() const { return scov >= 0.0; }
};

/// Streaming trace-(co)variance moments over samples for one field and input.
/// Samples must be added in a fixed order for bit-reproducible results.
class VarianceAccumulator {
 public:
  void add(const AnalysisSample& s);
  std::size_t size() const { return n_; }
  /// Throws Error when fewer than two samples were added.
  VarianceReport report() const;

 private:
  std::size_t n_ = 0;
  SparseVector sum_broad_, sum_route_, sum_resid_;
  double sq_broad_ = 0, sq_route_ = 0, sq_resid_ = 0, cross_ = 0;
};

VarianceReport variance_analysis(std::span<const AnalysisSample> samples);

}  // namespace grca
