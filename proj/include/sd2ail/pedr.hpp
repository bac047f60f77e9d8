#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "sd2ail/common.hpp"

namespace sd2ail::pedr {

/// Complete binary tree over a fixed number of leaves whose internal nodes
/// store `combine` of their children. Leaves beyond the logical size hold
/// the identity element.
class SegmentTree {
 public:
  using Combine = double (*)(double, double);

  SegmentTree() = default;
  SegmentTree(std::size_t leaves, Combine combine, double identity);

  std::size_t size() const { return leaves_; }
  void set(std::size_t leaf, double value);
  double get(std::size_t leaf) const { return nodes_[base_ + leaf]; }
  double root() const { return nodes_[1]; }

 protected:
  std::size_t leaves_ = 0;
  std::size_t base_ = 1;
  Combine combine_ = nullptr;
  double identity_ = 0.0;
  std::vector<double> nodes_;
};

class SumTree : public SegmentTree {
 public:
  SumTree() = default;
  explicit SumTree(std::size_t leaves);
  double total() const { return root(); }
  /// Leaf whose cumulative interval [sum_{j<i} v_j, sum_{j<=i} v_j) contains
  /// `mass`. Requires 0 <= mass < total().
  std::size_t prefix_find(double mass) const;
};

class MaxTree : public SegmentTree {
 public:
  MaxTree() = default;
  explicit MaxTree(std::size_t leaves);
  double max() const { return root(); }
};

/// Draw from a prioritised buffer.
struct SampleBatch {
  std::vector<std::uint64_t> ids;  // stable entry ids, valid until evicted
  Matrix entries;                  // dim x k
  Vector probabilities;            // P(i) of each draw
  Vector raw_weights;              // (1 / (N * P(i)))^eta
  Vector weights;                  // raw_weights / max(raw_weights)
};

/// Fixed-capacity FIFO store of vectors with proportional prioritised
/// sampling: P(i) = p_i^zeta / sum_k p_k^zeta.
class PriorityBuffer {
 public:
  PriorityBuffer() = default;
  PriorityBuffer(int dim, std::size_t capacity, double zeta);

  int dim() const { return dim_; }
  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return size_ == 0; }
  double zeta() const { return zeta_; }

  /// Inserts an entry, evicting the oldest when full. Without an explicit
  /// priority the entry gets the current maximum priority (1 when empty).
  /// Returns the entry id.
  std::uint64_t push(const Vector& entry, std::optional<double> priority = std::nullopt);

  /// k draws with replacement.
  SampleBatch sample(std::size_t k, double eta, Rng& rng) const;

  /// Sets p_i = |1 - D_i|. Ids of evicted entries are skipped; returns the
  /// number skipped.
  std::size_t update_priorities(std::span<const std::uint64_t> ids, const Vector& confidences);
  /// Sets raw priorities directly; same stale-id rule.
  std::size_t set_priorities(std::span<const std::uint64_t> ids, const Vector& priorities);

  bool contains(std::uint64_t id) const;
  double priority(std::uint64_t id) const;
  double probability(std::uint64_t id) const;
  Vector entry(std::uint64_t id) const;
  double total_mass() const { return mass_.total(); }
  double max_priority() const;
  std::uint64_t stale_skips() const { return stale_skips_; }

  /// Ids currently stored, oldest first.
  std::vector<std::uint64_t> ids() const;
  /// Entries currently stored, oldest first (dim x size).
  Matrix contents() const;

  /// Text snapshot: header, then one line per entry (values..., priority).
  void save(std::ostream& os) const;
  static PriorityBuffer load(std::istream& is);

 private:
  std::size_t slot_of(std::uint64_t id) const { return static_cast<std::size_t>(id % capacity_); }
  void set_slot_priority(std::size_t slot, double p);

  int dim_ = 0;
  std::size_t capacity_ = 0;
  double zeta_ = 0.6;
  std::size_t size_ = 0;
  std::uint64_t next_id_ = 0;
  std::uint64_t stale_skips_ = 0;
  Matrix data_;                       // dim x capacity
  std::vector<double> priority_;      // raw p_i per slot
  std::vector<std::uint64_t> owner_;  // id stored in each slot
  SumTree mass_;                      // p_i^zeta
  MaxTree max_;                       // p_i
};

/// Importance-weight exponent annealed linearly from `start` to 1.
struct AnnealSchedule {
  double start = 0.4;
  std::uint64_t total_steps = 1;

  double value(std::uint64_t step) const;
};

struct CompositeSample {
  Matrix expert;
  Vector expert_weights;
  std::vector<std::size_t> expert_buffer;  // source buffer of each expert column
  std::vector<std::uint64_t> expert_ids;
  std::vector<std::size_t> per_buffer_counts;
  Matrix pseudo;
  Vector pseudo_weights;
  std::vector<std::uint64_t> pseudo_ids;
  double eta = 1.0;
};

/// One priority buffer per expert trajectory plus one pseudo-expert buffer.
class ReplayCoordinator {
 public:
  ReplayCoordinator() = default;
  ReplayCoordinator(std::vector<PriorityBuffer> experts, PriorityBuffer pseudo, double ratio,
                    AnnealSchedule anneal);

  std::size_t expert_buffer_count() const { return experts_.size(); }
  PriorityBuffer& expert_buffer(std::size_t i) { return experts_.at(i); }
  const PriorityBuffer& expert_buffer(std::size_t i) const { return experts_.at(i); }
  PriorityBuffer& pseudo_buffer() { return pseudo_; }
  const PriorityBuffer& pseudo_buffer() const { return pseudo_; }
  double ratio() const { return ratio_; }
  const AnnealSchedule& anneal() const { return anneal_; }

  /// Splits k_expert draws over the expert buffers (remainder assigned
  /// round-robin from a rotating offset) and adds ratio * k_expert pseudo
  /// draws when the pseudo buffer is non-empty.
  CompositeSample sample(std::size_t k_expert, std::uint64_t step, Rng& rng);

  /// Feeds discriminator confidences back as priorities.
  void update_priorities(const CompositeSample& s, const Vector& expert_confidence,
                         const Vector& pseudo_confidence);

  std::size_t rotation() const { return rotation_; }
  void set_rotation(std::size_t r) { rotation_ = r; }

 private:
  std::vector<PriorityBuffer> experts_;
  PriorityBuffer pseudo_;
  double ratio_ = 7.0;
  AnnealSchedule anneal_;
  std::size_t rotation_ = 0;
};

/// Count split used by ReplayCoordinator::sample.
std::vector<std::size_t> split_counts(std::size_t total, std::size_t buffers, std::size_t offset);

}  // namespace sd2ail::pedr
