#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lithomt/config.hpp"
#include "lithomt/corpus/layout.hpp"
#include "lithomt/corpus/litho.hpp"
#include "lithomt/corpus/rules.hpp"

namespace lmt {

enum class Split { train, test };
std::string to_string(Split s);
Split parse_split(const std::string& name);

struct CorpusConfig {
  std::uint64_t seed = 1;
  int count = 200;
  double train_ratio = 0.85;
  int conditions_per_layout = 1;  // >1 renders each layout under that many consecutive grid entries
  int opc_iterations = 10;
  int source_size = 32;
  int workers = 0;                // 0 = hardware concurrency

  std::vector<SourceType> sources = {SourceType::annular, SourceType::circular, SourceType::bullseye};
  std::vector<double> thresholds = {0.0923125, 0.1436665};
  std::vector<double> foci = {0.0, 50.0};
  std::vector<double> doses = {1.0, 1.2};

  LayoutConfig layout;
  OpticsConfig optics;
  RuleSet drc;
  RuleSet mrc{3, 4, 16};
  RuleSet lrc;

  static CorpusConfig from_config(const KeyValueConfig& kv);
  KeyValueConfig to_config() const;
  void validate() const;

  // Cartesian product, source outermost and dose innermost.
  std::vector<ProcessCondition> condition_grid() const;
};

struct Sample {
  std::string id;
  BinaryRaster layout, mask, contour;
  ProcessCondition condition;
  std::vector<HotspotAnnotation> annotations;
  Split split = Split::train;

  std::vector<HotspotAnnotation> annotations_for(Task t) const;
};

// One manifest line.
struct SampleRecord {
  std::string id;
  Split split = Split::train;
  int condition_index = 0;
  int layout_group = 0;
  ProcessCondition condition;
  std::vector<HotspotAnnotation> annotations;
  std::vector<PlantedDefect> planted;
};

struct CorpusManifest {
  std::uint64_t seed = 0;
  std::vector<ProcessCondition> condition_grid;
  std::vector<SampleRecord> records;
  int size = 0;
  double pitch_nm = 1.0;
  double calibration = 0.0;
  std::string content_hash;  // of manifest.jsonl and meta.json

  int count(Split s) const;
  int count(Split s, Task t) const;  // records with at least one annotation of task t
};

// Deterministic, exact-quota split: the round(n * ratio) groups with the
// smallest split hash go to train.
std::vector<Split> assign_splits(std::uint64_t seed, int groups, double train_ratio);

Sample make_sample(const CorpusConfig& cfg, int index, std::vector<PlantedDefect>* planted = nullptr);

CorpusManifest build_corpus(const CorpusConfig& cfg, const std::filesystem::path& out_dir);
CorpusManifest load_manifest(const std::filesystem::path& corpus_dir);
Sample load_sample(const std::filesystem::path& corpus_dir, const CorpusManifest& m, const SampleRecord& r);
std::vector<Sample> load_split(const std::filesystem::path& corpus_dir, const CorpusManifest& m, Split s);

}  // namespace lmt
