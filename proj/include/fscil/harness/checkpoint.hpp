#pragma once

// Checkpoint archive: a directory holding one FTEN file per parameter and a
// manifest.json listing names, shapes, dtype and frozen flags.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "fscil/config.hpp"
#include "fscil/ften.hpp"
#include "fscil/nn.hpp"

namespace fscil {

template <typename T>
void write_checkpoint(const std::filesystem::path& dir, const std::vector<NamedParam<T>>& params, std::size_t session) {
  std::filesystem::create_directories(dir);
  Json entries = Json::array();
  for (const auto& p : params) {
    const std::string file = p.name + ".ften";
    ften::save(dir / file, p.tensor);
    entries.push_back({{"name", p.name},
                       {"shape", p.tensor.shape()},
                       {"dtype", ften::dtype_of<T>() == ften::DType::float32 ? "float32" : "float64"},
                       {"frozen", !p.tensor.requires_grad()},
                       {"file", file}});
  }
  const Json manifest{{"session", session}, {"parameters", entries}};
  std::ofstream out(dir / "manifest.json");
  if (!out) throw FormatError("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << "\n";
}

struct CheckpointEntry {
  std::string name;
  Shape shape;
  bool frozen = false;
  std::string file;
};

inline std::vector<CheckpointEntry> read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw FormatError("missing manifest in " + dir.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad manifest: ") + e.what());
  }
  std::vector<CheckpointEntry> out;
  for (const auto& e : j.at("parameters")) {
    out.push_back({e.at("name").get<std::string>(), e.at("shape").get<Shape>(), e.at("frozen").get<bool>(),
                   e.at("file").get<std::string>()});
  }
  return out;
}

// Restores values by name; every parameter must be present with a matching shape.
template <typename T>
void load_checkpoint(const std::filesystem::path& dir, const std::vector<NamedParam<T>>& params) {
  const auto entries = read_manifest(dir);
  for (const auto& p : params) {
    const CheckpointEntry* found = nullptr;
    for (const auto& e : entries)
      if (e.name == p.name) found = &e;
    if (!found) throw FormatError("checkpoint lacks parameter " + p.name);
    const auto loaded = ften::load<T>(dir / found->file);
    if (loaded.shape() != p.tensor.shape()) throw ShapeError("checkpoint shape mismatch for " + p.name);
    auto dst = p.tensor;
    assign_values(dst, loaded);
  }
}

}  // namespace fscil
