#include "sd2ail/pedr.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

#include "sd2ail/io.hpp"

namespace sd2ail::pedr {

SegmentTree::SegmentTree(std::size_t leaves, Combine combine, double identity)
    : leaves_(leaves), combine_(combine), identity_(identity) {
  if (leaves == 0) throw ShapeError("segment tree needs at least one leaf");
  base_ = 1;
  while (base_ < leaves) base_ <<= 1;
  nodes_.assign(2 * base_, identity);
}

void SegmentTree::set(std::size_t leaf, double value) {
  if (leaf >= leaves_) throw ShapeError("segment tree leaf out of range");
  std::size_t node = base_ + leaf;
  nodes_[node] = value;
  // Parents are recomputed from both children, never patched by deltas, so
  // rounding error does not accumulate across updates.
  for (node >>= 1; node >= 1; node >>= 1)
    nodes_[node] = combine_(nodes_[2 * node], nodes_[2 * node + 1]);
}

SumTree::SumTree(std::size_t leaves)
    : SegmentTree(leaves, [](double a, double b) { return a + b; }, 0.0) {}

std::size_t SumTree::prefix_find(double mass) const {
  if (!(mass >= 0.0 && mass < total()))
    throw ShapeError("prefix_find: mass outside [0, total)");
  std::size_t node = 1;
  while (node < base_) {
    const double left = nodes_[2 * node];
    if (mass < left) {
      node = 2 * node;
    } else {
      mass -= left;
      node = 2 * node + 1;
    }
  }
  std::size_t leaf = node - base_;
  // Rounding in the subtraction chain can walk one step past the last
  // positive leaf; fall back to the nearest positive leaf on the left.
  while ((leaf >= leaves_ || nodes_[base_ + leaf] <= 0.0) && leaf > 0) --leaf;
  return leaf;
}

MaxTree::MaxTree(std::size_t leaves)
    : SegmentTree(leaves, [](double a, double b) { return std::max(a, b); }, 0.0) {}

namespace {

int checked_dim(int dim, std::size_t capacity, double zeta) {
  if (dim <= 0) throw ShapeError("priority buffer entries need a positive dimension");
  if (capacity == 0) throw ConfigError("priority buffer capacity must be positive");
  if (!(zeta >= 0.0)) throw ConfigError("prioritisation exponent must be >= 0");
  return dim;
}

}  // namespace

PriorityBuffer::PriorityBuffer(int dim, std::size_t capacity, double zeta)
    : dim_(checked_dim(dim, capacity, zeta)),
      capacity_(capacity),
      zeta_(zeta),
      data_(Matrix::Zero(dim, static_cast<Eigen::Index>(capacity))),
      priority_(capacity, 0.0),
      owner_(capacity, 0),
      mass_(capacity),
      max_(capacity) {}

void PriorityBuffer::set_slot_priority(std::size_t slot, double p) {
  if (!(p >= 0.0) || !std::isfinite(p)) throw NumericError("priority must be finite and >= 0");
  priority_[slot] = p;
  mass_.set(slot, std::pow(p, zeta_));
  max_.set(slot, p);
}

double PriorityBuffer::max_priority() const { return size_ == 0 ? 1.0 : max_.max(); }

std::uint64_t PriorityBuffer::push(const Vector& entry, std::optional<double> priority) {
  if (entry.size() != dim_) throw ShapeError("priority buffer entry dimension mismatch");
  const double p = priority.value_or(max_priority());
  const std::uint64_t id = next_id_++;
  const std::size_t slot = slot_of(id);
  data_.col(static_cast<Eigen::Index>(slot)) = entry;
  owner_[slot] = id;
  set_slot_priority(slot, p);
  size_ = std::min(size_ + 1, capacity_);
  return id;
}

bool PriorityBuffer::contains(std::uint64_t id) const {
  return id < next_id_ && id + size_ >= next_id_ && owner_[slot_of(id)] == id;
}

double PriorityBuffer::priority(std::uint64_t id) const {
  if (!contains(id)) throw ShapeError("unknown or evicted entry id");
  return priority_[slot_of(id)];
}

double PriorityBuffer::probability(std::uint64_t id) const {
  if (!contains(id)) throw ShapeError("unknown or evicted entry id");
  return mass_.get(slot_of(id)) / mass_.total();
}

Vector PriorityBuffer::entry(std::uint64_t id) const {
  if (!contains(id)) throw ShapeError("unknown or evicted entry id");
  return data_.col(static_cast<Eigen::Index>(slot_of(id)));
}

SampleBatch PriorityBuffer::sample(std::size_t k, double eta, Rng& rng) const {
  if (empty()) throw ShapeError("cannot sample from an empty buffer");
  if (k == 0) throw ShapeError("sample size must be >= 1");
  const double total = mass_.total();
  if (!(total > 0.0)) throw NumericError("all priorities are zero");
  SampleBatch b;
  const auto n = static_cast<Eigen::Index>(k);
  b.ids.resize(k);
  b.entries.resize(dim_, n);
  b.probabilities.resize(n);
  b.raw_weights.resize(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const std::size_t slot = mass_.prefix_find(rng.uniform() * total);
    b.ids[static_cast<std::size_t>(j)] = owner_[slot];
    b.entries.col(j) = data_.col(static_cast<Eigen::Index>(slot));
    const double p = mass_.get(slot) / total;
    b.probabilities(j) = p;
    b.raw_weights(j) = std::pow(1.0 / (static_cast<double>(size_) * p), eta);
  }
  b.weights = b.raw_weights / b.raw_weights.maxCoeff();
  return b;
}

std::size_t PriorityBuffer::set_priorities(std::span<const std::uint64_t> ids,
                                           const Vector& priorities) {
  if (static_cast<Eigen::Index>(ids.size()) != priorities.size())
    throw ShapeError("one priority per id required");
  std::size_t skipped = 0;
  for (std::size_t j = 0; j < ids.size(); ++j) {
    if (!contains(ids[j])) {
      ++skipped;
      continue;
    }
    set_slot_priority(slot_of(ids[j]), priorities(static_cast<Eigen::Index>(j)));
  }
  stale_skips_ += skipped;
  return skipped;
}

std::size_t PriorityBuffer::update_priorities(std::span<const std::uint64_t> ids,
                                              const Vector& confidences) {
  return set_priorities(ids, (1.0 - confidences.array()).abs().matrix());
}

std::vector<std::uint64_t> PriorityBuffer::ids() const {
  std::vector<std::uint64_t> out;
  for (std::uint64_t id = next_id_ - size_; id < next_id_; ++id) out.push_back(id);
  return out;
}

Matrix PriorityBuffer::contents() const {
  Matrix out(dim_, static_cast<Eigen::Index>(size_));
  Eigen::Index j = 0;
  for (std::uint64_t id : ids()) out.col(j++) = data_.col(static_cast<Eigen::Index>(slot_of(id)));
  return out;
}

void PriorityBuffer::save(std::ostream& os) const {
  os << "SD2AIL-BUFFER 1 " << dim_ << ' ' << capacity_ << ' ' << io::format_double(zeta_) << ' '
     << size_ << ' ' << next_id_ << ' ' << stale_skips_ << '\n';
  for (std::uint64_t id : ids()) {
    const std::size_t slot = slot_of(id);
    for (int d = 0; d < dim_; ++d)
      os << io::format_double(data_(d, static_cast<Eigen::Index>(slot))) << ',';
    os << io::format_double(priority_[slot]) << '\n';
  }
}

PriorityBuffer PriorityBuffer::load(std::istream& is) {
  io::expect_token(is, "SD2AIL-BUFFER");
  int version = 0, dim = 0;
  std::size_t capacity = 0, size = 0;
  std::uint64_t next_id = 0, skips = 0;
  std::string zeta;
  is >> version >> dim >> capacity >> zeta >> size >> next_id >> skips;
  if (!is || version != 1) throw std::runtime_error("malformed buffer snapshot header");
  if (size > capacity || size > next_id) throw std::runtime_error("inconsistent buffer snapshot");
  PriorityBuffer b(dim, capacity, io::parse_double(zeta));
  b.next_id_ = next_id - size;
  std::string line;
  std::getline(is, line);
  for (std::size_t r = 0; r < size; ++r) {
    if (!std::getline(is, line)) throw std::runtime_error("truncated buffer snapshot");
    const auto fields = io::split(line, ',');
    if (fields.size() != static_cast<std::size_t>(dim) + 1)
      throw std::runtime_error("buffer snapshot row has the wrong column count");
    Vector e(dim);
    for (int d = 0; d < dim; ++d) e(d) = io::parse_double(fields[static_cast<std::size_t>(d)]);
    b.push(e, io::parse_double(fields.back()));
  }
  b.stale_skips_ = skips;
  return b;
}

double AnnealSchedule::value(std::uint64_t step) const {
  if (total_steps == 0 || step >= total_steps) return 1.0;
  return start + (1.0 - start) * static_cast<double>(step) / static_cast<double>(total_steps);
}

std::vector<std::size_t> split_counts(std::size_t total, std::size_t buffers, std::size_t offset) {
  if (buffers == 0) throw ShapeError("no buffers to split across");
  std::vector<std::size_t> counts(buffers, total / buffers);
  const std::size_t rem = total % buffers;
  for (std::size_t j = 0; j < rem; ++j) ++counts[(offset + j) % buffers];
  return counts;
}

ReplayCoordinator::ReplayCoordinator(std::vector<PriorityBuffer> experts, PriorityBuffer pseudo,
                                     double ratio, AnnealSchedule anneal)
    : experts_(std::move(experts)), pseudo_(std::move(pseudo)), ratio_(ratio), anneal_(anneal) {
  if (experts_.empty()) throw ConfigError("at least one expert buffer is required");
  if (!(ratio_ >= 0.0)) throw ConfigError("pseudo:expert ratio must be >= 0");
  if (!(anneal_.start > 0.0 && anneal_.start <= 1.0))
    throw ConfigError("importance exponent start must lie in (0, 1]");
}

CompositeSample ReplayCoordinator::sample(std::size_t k_expert, std::uint64_t step, Rng& rng) {
  for (const auto& b : experts_)
    if (b.empty()) throw ShapeError("expert buffer is empty");
  if (k_expert == 0) throw ShapeError("expert batch size must be >= 1");
  CompositeSample s;
  s.eta = anneal_.value(step);
  s.per_buffer_counts = split_counts(k_expert, experts_.size(), rotation_);
  rotation_ = (rotation_ + k_expert % experts_.size()) % experts_.size();

  const int dim = experts_.front().dim();
  s.expert.resize(dim, static_cast<Eigen::Index>(k_expert));
  s.expert_weights.resize(static_cast<Eigen::Index>(k_expert));
  Eigen::Index col = 0;
  for (std::size_t b = 0; b < experts_.size(); ++b) {
    const std::size_t k = s.per_buffer_counts[b];
    if (k == 0) continue;
    const SampleBatch draw = experts_[b].sample(k, s.eta, rng);
    const auto n = static_cast<Eigen::Index>(k);
    s.expert.middleCols(col, n) = draw.entries;
    s.expert_weights.segment(col, n) = draw.weights;
    for (std::size_t j = 0; j < k; ++j) {
      s.expert_buffer.push_back(b);
      s.expert_ids.push_back(draw.ids[j]);
    }
    col += n;
  }

  const auto k_pseudo = static_cast<std::size_t>(std::llround(ratio_ * static_cast<double>(k_expert)));
  if (!pseudo_.empty() && k_pseudo > 0) {
    const SampleBatch draw = pseudo_.sample(k_pseudo, s.eta, rng);
    s.pseudo = draw.entries;
    s.pseudo_weights = draw.weights;
    s.pseudo_ids = draw.ids;
  } else {
    s.pseudo.resize(dim, 0);
    s.pseudo_weights.resize(0);
  }
  return s;
}

void ReplayCoordinator::update_priorities(const CompositeSample& s, const Vector& expert_conf,
                                          const Vector& pseudo_conf) {
  if (expert_conf.size() != static_cast<Eigen::Index>(s.expert_ids.size()) ||
      pseudo_conf.size() != static_cast<Eigen::Index>(s.pseudo_ids.size()))
    throw ShapeError("one confidence per sampled entry required");
  for (std::size_t j = 0; j < s.expert_ids.size(); ++j) {
    const std::uint64_t id = s.expert_ids[j];
    experts_[s.expert_buffer[j]].update_priorities(std::span(&id, 1),
                                                   expert_conf.segment(static_cast<Eigen::Index>(j), 1));
  }
  pseudo_.update_priorities(s.pseudo_ids, pseudo_conf);
}

}  // namespace sd2ail::pedr
