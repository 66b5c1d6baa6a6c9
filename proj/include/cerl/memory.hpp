#pragma once

// Bounded rehearsal memory of representation vectors. Exemplars are chosen per treatment
// group by greedy herding: each pick keeps the running mean of the chosen set as close as
// possible to the full group mean.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cerl/matrix.hpp"
#include "cerl/model.hpp"

namespace cerl::memory {

struct MemorySet {
  Matrix representations;
  std::vector<double> y;
  std::vector<int> t;
  std::vector<int> source_tags;
  std::vector<std::int64_t> unit_ids;
  std::size_t capacity = 0;
  std::string provenance;  // which model produced the representation space

  std::size_t size() const { return y.size(); }
  std::size_t dim() const { return representations.cols(); }
  std::size_t treated_count() const;
  std::size_t control_count() const { return size() - treated_count(); }
  // Floats held: one representation row plus (y, t) per exemplar.
  std::size_t stored_floats() const { return size() * (dim() + 2); }

  // Row count <= capacity, aligned columns, treatments in {0, 1}.
  void validate() const;

  friend bool operator==(const MemorySet&, const MemorySet&) = default;
};

// Greedy herding order of the first m rows; ties go to the lowest index.
std::vector<std::size_t> herding_select(const Matrix& points, std::size_t m);

enum class Selection { herding, random };

// Per-group budget: floor(M/2) treated, ceil(M/2) control. A group smaller than its share is
// kept whole.
std::size_t treated_share(std::size_t capacity);
std::size_t control_share(std::size_t capacity);

// Selects a group-balanced subset of candidate exemplars.
MemorySet select_exemplars(const Matrix& representations, std::span<const double> y, std::span<const int> t,
                           std::span<const int> source_tags, std::span<const std::int64_t> unit_ids,
                           std::size_t capacity, Selection mode, std::uint64_t seed);

// Represents `data` with the model and keeps a balanced, herded subset of size <= capacity.
MemorySet build_memory(const model::RepresentationModel& model, const model::UnitData& data, std::size_t capacity,
                       Selection mode = Selection::herding, std::uint64_t seed = 0);

}  // namespace cerl::memory
