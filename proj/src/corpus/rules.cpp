#include "lithomt/corpus/rules.hpp"

#include <algorithm>
#include <set>

#include "lithomt/error.hpp"
#include "lithomt/morphology.hpp"

namespace lmt {

std::string to_string(Task t) {
  switch (t) {
    case Task::drc: return "drc";
    case Task::mrc: return "mrc";
    case Task::lrc: return "lrc";
  }
  return "unknown";
}

std::string to_string(HotspotClass k) {
  switch (k) {
    case HotspotClass::width: return "width";
    case HotspotClass::spacing: return "spacing";
    case HotspotClass::area: return "area";
    case HotspotClass::pinch: return "pinch";
    case HotspotClass::bridge: return "bridge";
    case HotspotClass::epe: return "epe";
  }
  return "unknown";
}

Task parse_task(const std::string& name) {
  if (name == "drc") return Task::drc;
  if (name == "mrc") return Task::mrc;
  if (name == "lrc") return Task::lrc;
  throw ConfigError("unknown task '" + name + "'");
}

HotspotClass parse_hotspot_class(const std::string& name) {
  for (auto k : {HotspotClass::width, HotspotClass::spacing, HotspotClass::area, HotspotClass::pinch,
                 HotspotClass::bridge, HotspotClass::epe})
    if (to_string(k) == name) return k;
  throw ConfigError("unknown hotspot class '" + name + "'");
}

int class_index(HotspotClass k) {
  switch (k) {
    case HotspotClass::width:
    case HotspotClass::pinch: return 0;
    case HotspotClass::spacing:
    case HotspotClass::bridge: return 1;
    case HotspotClass::area:
    case HotspotClass::epe: return 2;
  }
  return 0;
}

HotspotClass class_from_index(Task t, int index) {
  static constexpr HotspotClass geometric[] = {HotspotClass::width, HotspotClass::spacing, HotspotClass::area};
  static constexpr HotspotClass litho[] = {HotspotClass::pinch, HotspotClass::bridge, HotspotClass::epe};
  if (index < 0 || index >= kClassesPerTask) throw InputError("class index out of range");
  return t == Task::lrc ? litho[index] : geometric[index];
}

bool class_belongs_to(Task t, HotspotClass k) {
  const bool litho = k == HotspotClass::pinch || k == HotspotClass::bridge || k == HotspotClass::epe;
  return litho == (t == Task::lrc);
}

void RuleSet::validate_geometric() const {
  if (min_width <= 0 || min_spacing <= 0 || min_area <= 0 || min_box < 1)
    throw ConfigError("rule values must be positive");
}

void RuleSet::validate_lithographic() const {
  if (pinch_width <= 0 || bridge_gap <= 0 || !(epe_tolerance > 0) || min_box < 1)
    throw ConfigError("rule values must be positive");
}

namespace {

// Cluster set pixels 4-connectedly, one box per cluster; boxes that overlap are merged.
std::vector<PixelBox> merge_overlapping(std::vector<PixelBox> boxes) {
  bool changed = true;
  while (changed) {
    changed = false;
    for (size_t i = 0; i < boxes.size() && !changed; ++i)
      for (size_t j = i + 1; j < boxes.size(); ++j)
        if (boxes[i].overlaps(boxes[j])) {
          boxes[i] = boxes[i].merged(boxes[j]);
          boxes.erase(boxes.begin() + static_cast<long>(j));
          changed = true;
          break;
        }
  }
  std::sort(boxes.begin(), boxes.end(), [](const PixelBox& a, const PixelBox& b) {
    return std::tie(a.y_min, a.x_min, a.y_max, a.x_max) < std::tie(b.y_min, b.x_min, b.y_max, b.x_max);
  });
  return boxes;
}

// Distinct labels of `owners` 4-adjacent to (or under) the pixels of a cluster.
std::set<int> touching_labels(const morph::Components& clusters, int id, const Grid<int>& owners) {
  std::set<int> out;
  const PixelBox& b = clusters.boxes[id];
  for (int r = b.y_min; r < b.y_max; ++r)
    for (int c = b.x_min; c < b.x_max; ++c) {
      if (clusters.labels(r, c) != id) continue;
      constexpr int dr[5] = {0, -1, 1, 0, 0};
      constexpr int dc[5] = {0, 0, 0, -1, 1};
      for (int d = 0; d < 5; ++d) {
        const int nr = r + dr[d], nc = c + dc[d];
        if (nr < 0 || nc < 0 || nr >= owners.rows() || nc >= owners.cols()) continue;
        if (owners(nr, nc) >= 0) out.insert(owners(nr, nc));
      }
    }
  return out;
}

// Narrow background pixels between at least two distinct foreground components.
Bits narrow_gaps(const Bits& fg, int gap, const morph::Components& fg_parts) {
  const Bits bg = (fg == 0).cast<std::uint8_t>();
  const Bits removed = (bg != 0 && morph::open(bg, gap, morph::Pad::one) == 0).cast<std::uint8_t>();
  const morph::Components cl = morph::label_components(removed);
  Bits out = Bits::Zero(fg.rows(), fg.cols());
  for (int id = 0; id < cl.count(); ++id) {
    if (touching_labels(cl, id, fg_parts.labels).size() < 2) continue;
    out = (out != 0 || cl.labels == id).cast<std::uint8_t>();
  }
  return out;
}

PixelBox grow_to(PixelBox b, int side, int rows, int cols) {
  auto widen = [side](int& lo, int& hi, int limit) {
    const int extra = side - (hi - lo);
    if (extra <= 0) return;
    lo -= extra / 2;
    hi += extra - extra / 2;
    if (lo < 0) hi -= lo, lo = 0;
    if (hi > limit) lo -= hi - limit, hi = limit;
    lo = std::max(lo, 0);
  };
  widen(b.x_min, b.x_max, cols);
  widen(b.y_min, b.y_max, rows);
  return b;
}

void emit(std::vector<HotspotAnnotation>& out, Task task, HotspotClass k, std::vector<PixelBox> boxes,
          const RuleSet& rules, const Bits& frame) {
  boxes = merge_overlapping(std::move(boxes));
  for (auto& b : boxes) b = grow_to(b, rules.min_box, frame.rows(), frame.cols());
  for (const auto& b : merge_overlapping(std::move(boxes))) out.push_back({task, k, b});
}

std::vector<HotspotAnnotation> geometric_check(const BinaryRaster& r, const RuleSet& rules, Task task) {
  rules.validate_geometric();
  std::vector<HotspotAnnotation> out;
  const Bits& px = r.pixels;
  const morph::Components parts = morph::label_components(px);

  const Bits thin = (px != 0 && morph::open(px, rules.min_width, morph::Pad::zero) == 0).cast<std::uint8_t>();
  emit(out, task, HotspotClass::width, morph::label_components(thin).boxes, rules, px);

  const Bits gaps = narrow_gaps(px, rules.min_spacing, parts);
  emit(out, task, HotspotClass::spacing, morph::label_components(gaps).boxes, rules, px);

  std::vector<PixelBox> small;
  for (int id = 0; id < parts.count(); ++id)
    if (parts.sizes[id] < rules.min_area) small.push_back(parts.boxes[id]);
  emit(out, task, HotspotClass::area, small, rules, px);
  return out;
}

}  // namespace

std::vector<HotspotAnnotation> check_drc(const BinaryRaster& layout, const RuleSet& rules) {
  return geometric_check(layout, rules, Task::drc);
}

std::vector<HotspotAnnotation> check_mrc(const BinaryRaster& mask, const RuleSet& rules) {
  return geometric_check(mask, rules, Task::mrc);
}

std::vector<HotspotAnnotation> check_lrc(const BinaryRaster& contour, const BinaryRaster& layout,
                                         const RuleSet& rules) {
  if (!contour.same_shape(layout)) throw InputError("check_lrc: contour and layout shapes differ");
  rules.validate_lithographic();
  std::vector<HotspotAnnotation> out;
  const Bits& c = contour.pixels;
  const Bits& l = layout.pixels;

  // Pinch: printed necks that split the printed shape into separate wide parts.
  {
    const Bits printed = (c != 0 && l != 0).cast<std::uint8_t>();
    const Bits wide = morph::open(printed, rules.pinch_width, morph::Pad::zero);
    const morph::Components wide_parts = morph::label_components(wide);
    const Bits necks = (printed != 0 && wide == 0).cast<std::uint8_t>();
    const morph::Components cl = morph::label_components(necks);
    std::vector<PixelBox> boxes;
    for (int id = 0; id < cl.count(); ++id)
      if (touching_labels(cl, id, wide_parts.labels).size() >= 2) boxes.push_back(cl.boxes[id]);
    emit(out, Task::lrc, HotspotClass::pinch, boxes, rules, l);
  }

  // Bridge: printed material inside a narrow layout gap that touches both sides.
  {
    const morph::Components layout_parts = morph::label_components(l);
    const Bits corridor = narrow_gaps(l, rules.bridge_gap, layout_parts);
    const Bits spill = (c != 0 && corridor != 0).cast<std::uint8_t>();
    const morph::Components cl = morph::label_components(spill);
    std::vector<PixelBox> boxes;
    for (int id = 0; id < cl.count(); ++id)
      if (touching_labels(cl, id, layout_parts.labels).size() >= 2) boxes.push_back(cl.boxes[id]);
    emit(out, Task::lrc, HotspotClass::bridge, boxes, rules, l);
  }

  // EPE: edge pixels of either raster farther than the tolerance from the other's edges.
  {
    const Bits le = morph::edge_regions(l);
    const Bits ce = morph::edge_regions(c);
    const Grid<double> to_layout = morph::distance_transform(le);
    const Grid<double> to_contour = morph::distance_transform(ce);
    const Bits far = ((ce != 0 && to_layout > rules.epe_tolerance) ||
                      (le != 0 && to_contour > rules.epe_tolerance))
                         .cast<std::uint8_t>();
    // Staircase edges are only 8-connected; group by 3x3 proximity, box the flagged pixels.
    const morph::Components groups = morph::label_components(morph::dilate(far, 3));
    std::vector<PixelBox> boxes(groups.count(), PixelBox{});
    std::vector<bool> seen(groups.count(), false);
    for (int r = 0; r < far.rows(); ++r)
      for (int col = 0; col < far.cols(); ++col) {
        if (!far(r, col)) continue;
        const int g = groups.labels(r, col);
        const PixelBox px{col, r, col + 1, r + 1};
        boxes[g] = seen[g] ? boxes[g].merged(px) : px;
        seen[g] = true;
      }
    emit(out, Task::lrc, HotspotClass::epe, boxes, rules, l);
  }
  return out;
}

}  // namespace lmt
