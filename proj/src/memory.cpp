#include "cerl/memory.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <random>

#include "cerl/errors.hpp"
#include "cerl/kernels.hpp"

namespace cerl::memory {

std::size_t MemorySet::treated_count() const {
  return static_cast<std::size_t>(std::count(t.begin(), t.end(), 1));
}

void MemorySet::validate() const {
  if (representations.rows() != y.size() || t.size() != y.size() || source_tags.size() != y.size() ||
      unit_ids.size() != y.size()) {
    throw InvalidInput("memory set: column lengths differ");
  }
  if (size() > capacity) {
    throw InvalidInput("memory set holds " + std::to_string(size()) + " exemplars, capacity " + std::to_string(capacity));
  }
  for (int v : t)
    if (v != 0 && v != 1) throw InvalidInput("memory set: treatment must be 0 or 1");
}

std::vector<std::size_t> herding_select(const Matrix& points, std::size_t m) {
  const std::size_t n = points.rows(), d = points.cols();
  if (m == 0 || m > n) {
    throw InvalidInput("herding_select: need 1 <= m <= " + std::to_string(n) + ", got " + std::to_string(m));
  }
  std::vector<double> mu(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) kernels::axpy(1.0, points.row(i).data(), mu.data(), d);
  for (double& v : mu) v /= static_cast<double>(n);

  std::vector<double> running(d, 0.0), candidate(d);
  std::vector<char> taken(n, 0);
  std::vector<std::size_t> order;
  order.reserve(m);
  for (std::size_t k = 1; k <= m; ++k) {
    const double inv = 1.0 / static_cast<double>(k);
    std::size_t best = n;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      const auto row = points.row(i);
      for (std::size_t c = 0; c < d; ++c) candidate[c] = (running[c] + row[c]) * inv;
      const double dist = kernels::squared_distance(mu.data(), candidate.data(), d);
      if (dist < best_dist) {
        best_dist = dist;
        best = i;
      }
    }
    taken[best] = 1;
    order.push_back(best);
    kernels::axpy(1.0, points.row(best).data(), running.data(), d);
  }
  return order;
}

std::size_t treated_share(std::size_t capacity) { return capacity / 2; }
std::size_t control_share(std::size_t capacity) { return capacity - capacity / 2; }

MemorySet select_exemplars(const Matrix& representations, std::span<const double> y, std::span<const int> t,
                           std::span<const int> source_tags, std::span<const std::int64_t> unit_ids,
                           std::size_t capacity, Selection mode, std::uint64_t seed) {
  const std::size_t n = representations.rows();
  if (y.size() != n || t.size() != n || source_tags.size() != n || unit_ids.size() != n) {
    throw InvalidInput("select_exemplars: column lengths differ");
  }
  if (capacity < 2) throw InvalidInput("memory capacity must be at least 2");
  std::vector<std::size_t> treated, control;
  model::split_groups(t, treated, control);
  if (treated.empty() || control.empty()) {
    throw InvalidInput("memory: both treatment groups need at least one unit");
  }
  std::mt19937_64 rng(seed ^ 0x6d656d6f7279ull);
  auto pick = [&](const std::vector<std::size_t>& group, std::size_t share) {
    if (group.size() <= share) return group;
    std::vector<std::size_t> chosen;
    if (mode == Selection::herding) {
      const Matrix pts = representations.select_rows(group);
      for (std::size_t local : herding_select(pts, share)) chosen.push_back(group[local]);
    } else {
      std::sample(group.begin(), group.end(), std::back_inserter(chosen), share, rng);
    }
    return chosen;
  };
  std::vector<std::size_t> keep = pick(treated, treated_share(capacity));
  const std::vector<std::size_t> keep0 = pick(control, control_share(capacity));
  keep.insert(keep.end(), keep0.begin(), keep0.end());

  MemorySet mem;
  mem.capacity = capacity;
  mem.representations = representations.select_rows(keep);
  for (std::size_t i : keep) {
    mem.y.push_back(y[i]);
    mem.t.push_back(t[i]);
    mem.source_tags.push_back(source_tags[i]);
    mem.unit_ids.push_back(unit_ids[i]);
  }
  mem.validate();
  return mem;
}

MemorySet build_memory(const model::RepresentationModel& model, const model::UnitData& data, std::size_t capacity,
                       Selection mode, std::uint64_t seed) {
  data.validate();
  const Matrix R = model::represent(model, data.X);
  std::vector<int> tags(data.size(), data.source_id);
  std::vector<std::int64_t> ids = data.ids;
  if (ids.empty()) {
    ids.resize(data.size());
    std::iota(ids.begin(), ids.end(), 0);
  }
  return select_exemplars(R, data.y, data.t, tags, ids, capacity, mode, seed);
}

}  // namespace cerl::memory
