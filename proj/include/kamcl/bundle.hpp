#pragma once

// A prepared dataset on disk: interactions, filtered triples and the
// leave-one-out split, plus a small kv descriptor.
//
//   <dir>/dataset.kv        behaviors, target, split seed, counts
//   <dir>/interactions.tsv  user<TAB>item<TAB>behavior
//   <dir>/triples.tsv       head<TAB>relation<TAB>tail
//   <dir>/split.tsv         user<TAB>held_out_item<TAB>seed

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "kamcl/interaction_graph.hpp"
#include "kamcl/knowledge_graph.hpp"
#include "kamcl/kv.hpp"
#include "kamcl/split.hpp"
#include "kamcl/text.hpp"

namespace kamcl {

struct DataBundle {
  InteractionGraph graph;  // full graph, test edges included
  KnowledgeGraph kg;
  DatasetSplit split;
};

inline const std::vector<std::string>& bundle_files() {
  static const std::vector<std::string> files{"dataset.kv", "interactions.tsv", "triples.tsv", "split.tsv"};
  return files;
}

inline std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write '" + path.string() + "'");
  return out;
}

/// Writes the bundle under `dir` (created if missing); returns the written paths.
inline std::vector<std::string> write_bundle(const std::filesystem::path& dir, const DataBundle& b) {
  std::filesystem::create_directories(dir);
  const auto& g = b.graph;
  KvList meta{{"dataset.behaviors", kv::from_strings(g.behaviors())},
              {"dataset.target", g.behaviors()[g.target_behavior()]},
              {"dataset.split_seed", std::to_string(b.split.seed)},
              {"dataset.users", std::to_string(g.num_users())},
              {"dataset.items", std::to_string(g.num_items())},
              {"dataset.edges", std::to_string(g.edges().size())},
              {"dataset.entities", std::to_string(b.kg.num_entities())},
              {"dataset.relations", std::to_string(b.kg.num_relations())},
              {"dataset.triples", std::to_string(b.kg.triples().size())},
              {"dataset.test_users", std::to_string(b.split.num_test_users())}};
  {
    auto out = open_output(dir / "dataset.kv");
    write_kv(out, meta);
  }
  {
    auto out = open_output(dir / "interactions.tsv");
    write_interactions(out, g);
  }
  {
    auto out = open_output(dir / "triples.tsv");
    write_triples(out, b.kg);
  }
  {
    auto out = open_output(dir / "split.tsv");
    write_split_manifest(out, b.split);
  }
  std::vector<std::string> paths;
  for (const auto& f : bundle_files()) paths.push_back((dir / f).string());
  return paths;
}

inline DataBundle load_bundle(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw ValidationError("data bundle '" + dir.string() + "' is not a directory");
  std::vector<std::string> behaviors;
  std::string target;
  {
    auto in = open_input((dir / "dataset.kv").string());
    for (const auto& e : parse_kv(in)) {
      if (e.key == "dataset.behaviors") {
        behaviors = kv::to_strings(e);
      } else if (e.key == "dataset.target") {
        target = e.value;
      }
    }
  }
  if (behaviors.empty()) throw ValidationError(dir.string() + "/dataset.kv: missing dataset.behaviors");
  DataBundle b;
  b.graph = load_interactions((dir / "interactions.tsv").string(), behaviors, target).graph;
  b.kg = load_triples((dir / "triples.tsv").string(), b.graph.item_ids()).kg;
  auto in = open_input((dir / "split.tsv").string());
  b.split = read_split_manifest(in, b.graph);
  return b;
}

/// Content hashes of the bundle files, for run manifests.
inline std::vector<std::pair<std::string, std::string>> bundle_hashes(const std::filesystem::path& dir) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : bundle_files()) out.emplace_back(f, hex64(fnv1a(read_file((dir / f).string()))));
  return out;
}

}  // namespace kamcl
