#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "fscil/harness/memory.hpp"
#include "fscil/harness/stream.hpp"
#include "fscil/objectives.hpp"
#include "fscil/rng.hpp"

namespace fscil {

// Up to `batch_size` current-session samples (drawn without replacement) plus
// memory prototypes: all of them when prototypes_per_batch < 0, otherwise a
// random subset of that size. Prototypes from the base session are tagged
// base; current-session samples and later prototypes are tagged novel.
template <typename T>
TaggedBatch<T> compose_batch(const LabeledSet<T>& session, const PrototypeMemory<T>& memory, std::size_t batch_size,
                             Rng& rng, long prototypes_per_batch = -1) {
  if (memory.empty()) throw ContractError("compose_batch: memory is empty in the incremental phase");
  if (session.features.rank() != 4) throw ShapeError("compose_batch: session features must be [n, D, H, W]");

  std::vector<std::size_t> picks(session.size());
  std::iota(picks.begin(), picks.end(), std::size_t{0});
  std::shuffle(picks.begin(), picks.end(), rng);
  picks.resize(std::min(batch_size, picks.size()));

  auto classes = memory.classes();
  if (prototypes_per_batch >= 0 && static_cast<std::size_t>(prototypes_per_batch) < classes.size()) {
    std::shuffle(classes.begin(), classes.end(), rng);
    classes.resize(static_cast<std::size_t>(prototypes_per_batch));
    std::sort(classes.begin(), classes.end());
  }

  TaggedBatch<T> batch;
  std::vector<Tensor<T>> parts;
  if (!picks.empty()) {
    parts.push_back(index_select(session.features, 0, picks));
    for (const auto i : picks) {
      batch.labels.push_back(session.labels[i]);
      batch.groups.push_back(SampleGroup::novel);
      batch.sources.push_back(SampleSource::session);
    }
  }
  if (!classes.empty()) {
    parts.push_back(memory.stack(classes));
    for (const auto c : classes) {
      batch.labels.push_back(c);
      batch.groups.push_back(memory.at(c).session == 0 ? SampleGroup::base : SampleGroup::novel);
      batch.sources.push_back(SampleSource::memory);
    }
  }
  if (parts.empty()) throw ContractError("compose_batch: empty batch");
  batch.features = parts.size() == 1 ? parts[0] : concat(parts, 0);
  return batch;
}

}  // namespace fscil
