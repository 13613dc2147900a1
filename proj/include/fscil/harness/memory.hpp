#pragma once

#include <map>
#include <string>
#include <vector>

#include "fscil/ops.hpp"
#include "fscil/tensor.hpp"

namespace fscil {

// Class id -> mean intermediate feature map [D, H, W], with the session that added it.
template <typename T>
class PrototypeMemory {
 public:
  struct Entry {
    Tensor<T> prototype;
    std::size_t session = 0;
  };

  // features: [n, D, H, W]. Every class in `labels` must be new to the memory.
  void update(const Tensor<T>& features, const std::vector<std::size_t>& labels, std::size_t session) {
    if (features.rank() != 4 || features.shape()[0] != labels.size()) {
      throw ShapeError("update_memory: features " + shape_str(features.shape()) + " vs " +
                       std::to_string(labels.size()) + " labels");
    }
    const Shape item(features.shape().begin() + 1, features.shape().end());
    const std::size_t dim = shape_numel(item);
    std::map<std::size_t, std::pair<std::vector<double>, std::size_t>> sums;
    const auto data = features.data();
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (entries_.count(labels[i])) {
        throw ContractError("update_memory: class " + std::to_string(labels[i]) + " already present");
      }
      auto& [sum, count] = sums[labels[i]];
      if (sum.empty()) sum.assign(dim, 0.0);
      for (std::size_t k = 0; k < dim; ++k) sum[k] += static_cast<double>(data[i * dim + k]);
      ++count;
    }
    for (auto& [c, acc] : sums) {
      std::vector<T> mean(dim);
      for (std::size_t k = 0; k < dim; ++k) mean[k] = static_cast<T>(acc.first[k] / static_cast<double>(acc.second));
      entries_.emplace(c, Entry{Tensor<T>(item, std::move(mean)), session});
    }
  }

  bool empty() const { return entries_.empty(); }
  std::size_t size() const { return entries_.size(); }
  bool contains(std::size_t c) const { return entries_.count(c) > 0; }
  const Entry& at(std::size_t c) const { return entries_.at(c); }

  std::vector<std::size_t> classes() const {
    std::vector<std::size_t> out;
    for (const auto& [c, _] : entries_) out.push_back(c);
    return out;
  }

  // Prototypes of `classes` stacked into [k, D, H, W].
  Tensor<T> stack(const std::vector<std::size_t>& classes) const {
    if (classes.empty()) throw ContractError("PrototypeMemory::stack: no classes requested");
    const auto& first = at(classes.front()).prototype;
    Shape shape{classes.size()};
    shape.insert(shape.end(), first.shape().begin(), first.shape().end());
    std::vector<T> data;
    data.reserve(shape_numel(shape));
    for (const auto c : classes) {
      const auto v = at(c).prototype.data();
      data.insert(data.end(), v.begin(), v.end());
    }
    return Tensor<T>(std::move(shape), std::move(data));
  }

 private:
  std::map<std::size_t, Entry> entries_;
};

}  // namespace fscil
