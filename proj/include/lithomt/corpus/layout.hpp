#pragma once

#include <cstdint>
#include <vector>

#include "lithomt/corpus/rules.hpp"
#include "lithomt/raster.hpp"

namespace lmt {

// Routing-style Manhattan layout generator. Wires run along parallel tracks
// and adjacent tracks are joined by vertical jogs into L / T shapes.
struct LayoutConfig {
  int size = 128;
  double pitch_nm = 8.0;
  int grid = 2;                      // snap unit, px
  int track_pitch = 24;
  std::vector<int> wire_widths = {8, 10, 12};
  double density = 0.8;              // chance that a track carries wires
  double jog_rate = 0.5;             // chance of joining two neighbouring tracks
  double injection_rate = 0.3;
  int defect_size = 4;               // neck width or gap length of a planted defect
  bool allow_transpose = true;
  RuleSet rules;                     // the clean pattern satisfies these

  void validate() const;
};

struct PlantedDefect {
  HotspotClass klass = HotspotClass::width;
  PixelBox bbox;
};

struct GeneratedLayout {
  BinaryRaster raster;
  std::vector<PlantedDefect> defects;
};

GeneratedLayout generate_layout(std::uint64_t seed, const LayoutConfig& cfg);

}  // namespace lmt
