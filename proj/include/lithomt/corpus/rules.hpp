#pragma once

#include <string>
#include <vector>

#include "lithomt/raster.hpp"

namespace lmt {

enum class Task { drc, mrc, lrc };
enum class HotspotClass { width, spacing, area, pinch, bridge, epe };

std::string to_string(Task t);
std::string to_string(HotspotClass k);
Task parse_task(const std::string& name);
HotspotClass parse_hotspot_class(const std::string& name);

// Per-task class ids: DRC/MRC use {width, spacing, area}; LRC uses {pinch, bridge, epe}.
inline constexpr int kClassesPerTask = 3;
int class_index(HotspotClass k);
HotspotClass class_from_index(Task t, int index);
bool class_belongs_to(Task t, HotspotClass k);

struct HotspotAnnotation {
  Task task = Task::drc;
  HotspotClass klass = HotspotClass::width;
  PixelBox bbox;

  friend bool operator==(const HotspotAnnotation&, const HotspotAnnotation&) = default;
};

// Rule values in pixels.
struct RuleSet {
  int min_width = 8;
  int min_spacing = 8;
  int min_area = 64;
  int pinch_width = 6;
  int bridge_gap = 8;
  double epe_tolerance = 2.0;
  int min_box = 12;  // reported boxes are grown to at least this side length

  void validate_geometric() const;
  void validate_lithographic() const;
};

std::vector<HotspotAnnotation> check_drc(const BinaryRaster& layout, const RuleSet& rules);
std::vector<HotspotAnnotation> check_mrc(const BinaryRaster& mask, const RuleSet& rules);
std::vector<HotspotAnnotation> check_lrc(const BinaryRaster& contour, const BinaryRaster& layout,
                                         const RuleSet& rules);

}  // namespace lmt
