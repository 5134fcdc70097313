#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <vector>

#include <Eigen/Core>

namespace grca {

/// Parameter-space vector stored as dense blocks keyed by offset. Blocks at
/// the same offset always have the same length.
class SparseVector {
 public:
  void add(std::size_t offset, const Eigen::Ref<const Eigen::VectorXd>& values,
           double scale = 1.0);
  void add(const SparseVector& other, double scale = 1.0);

  double dot(const SparseVector& other) const;
  double squared_norm() const;
  bool empty() const { return blocks_.empty(); }
  /// Largest absolute difference over the union of both supports.
  double max_abs_diff(const SparseVector& other) const;
  SparseVector scaled(double s) const;

  const std::map<std::size_t, Eigen::VectorXd>& blocks() const { return blocks_; }

 private:
  std::map<std::size_t, Eigen::VectorXd> blocks_;
};

/// Gradient of one token's log-probability; `values` is empty for tokens that
/// do not depend on any parameter.
struct ScoreBlock {
  std::size_t offset = 0;
  Eigen::VectorXd values;
};

/// Per-token log-probabilities of one sampled sequence under the current and
/// rollout policies, with optional exact per-token scores.
struct LogProbTrace {
  std::vector<double> logp_new;
  std::vector<double> logp_old;
  std::optional<std::vector<ScoreBlock>> scores;
};

}  // namespace grca
