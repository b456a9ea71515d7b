#include "lithomt/corpus/layout.hpp"

#include <algorithm>
#include <random>

#include "lithomt/error.hpp"

namespace lmt {

void LayoutConfig::validate() const {
  if (size <= 0 || grid <= 0 || track_pitch <= 0 || defect_size <= 0 || !(pitch_nm > 0))
    throw ConfigError("layout sizes must be positive");
  if (wire_widths.empty()) throw ConfigError("layout needs at least one wire width");
  for (int w : wire_widths)
    if (w <= 0 || w >= track_pitch) throw ConfigError("wire widths must lie in (0, track_pitch)");
  if (density < 0 || density > 1 || jog_rate < 0 || jog_rate > 1 || injection_rate < 0 || injection_rate > 1)
    throw ConfigError("layout rates must lie in [0, 1]");
  rules.validate_geometric();
}

namespace {

struct Rect {
  int x0, y0, x1, y1;  // half-open
  bool jog = false;
};

class Builder {
 public:
  Builder(std::uint64_t seed, const LayoutConfig& cfg) : rng_(seed), cfg_(cfg), bits_(Bits::Zero(cfg.size, cfg.size)) {}

  int uniform(int lo, int hi) {  // inclusive
    return lo + static_cast<int>(rng_() % static_cast<std::uint64_t>(hi - lo + 1));
  }
  double unit() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }
  int snap(int v) const { return v / cfg_.grid * cfg_.grid; }

  // Adds the rectangle only if the pattern stays rule-clean.
  bool try_add(Rect r) {
    r.x0 = std::clamp(r.x0, 0, cfg_.size);
    r.x1 = std::clamp(r.x1, 0, cfg_.size);
    r.y0 = std::clamp(r.y0, 0, cfg_.size);
    r.y1 = std::clamp(r.y1, 0, cfg_.size);
    if (r.x0 >= r.x1 || r.y0 >= r.y1) return false;
    Bits next = bits_;
    next.block(r.y0, r.x0, r.y1 - r.y0, r.x1 - r.x0).setOnes();
    if (!check_drc(BinaryRaster(next), cfg_.rules).empty()) return false;
    bits_ = std::move(next);
    rects_.push_back(r);
    return true;
  }

  std::mt19937_64 rng_;
  const LayoutConfig& cfg_;
  Bits bits_;
  std::vector<Rect> rects_;
};

bool flagged(const Bits& bits, const LayoutConfig& cfg, const PlantedDefect& d) {
  for (const auto& a : check_drc(BinaryRaster(bits), cfg.rules))
    if (a.klass == d.klass && box_iou(a.bbox, d.bbox) > 0) return true;
  return false;
}

bool covered_by_jog(const std::vector<Rect>& rects, int x0, int x1, int margin) {
  for (const auto& r : rects)
    if (r.jog && x0 < r.x1 + margin && r.x0 - margin < x1) return true;
  return false;
}

// Thin a wire to `defect_size` over a short run away from its ends and jogs.
bool plant_neck(Builder& b, const Rect& wire, PlantedDefect& out) {
  const LayoutConfig& cfg = b.cfg_;
  const int margin = cfg.rules.min_width + 2;
  const int len = std::max(cfg.defect_size + 2, cfg.rules.min_width / 2 + 2);
  if (wire.x1 - wire.x0 < 2 * margin + len) return false;
  const int w = wire.y1 - wire.y0;
  if (w <= cfg.defect_size) return false;
  for (int attempt = 0; attempt < 6; ++attempt) {
    const int x0 = b.snap(b.uniform(wire.x0 + margin, wire.x1 - margin - len));
    if (x0 < wire.x0 + margin || covered_by_jog(b.rects_, x0, x0 + len, margin)) continue;
    const int top = (w - cfg.defect_size) / 2;
    Bits next = b.bits_;
    next.block(wire.y0, x0, top, len).setZero();
    next.block(wire.y0 + top + cfg.defect_size, x0, w - top - cfg.defect_size, len).setZero();
    const PlantedDefect d{HotspotClass::width, {x0, wire.y0 + top, x0 + len, wire.y0 + top + cfg.defect_size}};
    if (!flagged(next, cfg, d)) continue;
    b.bits_ = std::move(next);
    out = d;
    return true;
  }
  return false;
}

// Cut a wire with a narrow gap so the two pieces become separate shapes.
bool plant_gap(Builder& b, const Rect& wire, PlantedDefect& out) {
  const LayoutConfig& cfg = b.cfg_;
  const int piece = cfg.rules.min_width + 4;
  if (wire.x1 - wire.x0 < 2 * piece + cfg.defect_size) return false;
  for (int attempt = 0; attempt < 6; ++attempt) {
    const int x0 = b.snap(b.uniform(wire.x0 + piece, wire.x1 - piece - cfg.defect_size));
    if (x0 < wire.x0 + piece) continue;
    Bits next = b.bits_;
    next.block(wire.y0, x0, wire.y1 - wire.y0, cfg.defect_size).setZero();
    const PlantedDefect d{HotspotClass::spacing, {x0, wire.y0, x0 + cfg.defect_size, wire.y1}};
    if (!flagged(next, cfg, d)) continue;
    b.bits_ = std::move(next);
    out = d;
    return true;
  }
  return false;
}

}  // namespace

GeneratedLayout generate_layout(std::uint64_t seed, const LayoutConfig& cfg) {
  cfg.validate();
  Builder b(seed, cfg);
  GeneratedLayout out;
  const bool plant = b.unit() < cfg.injection_rate;
  const bool transpose = cfg.allow_transpose && (b.rng_() & 1);
  if (cfg.density <= 0) {
    out.raster = BinaryRaster(std::move(b.bits_), cfg.pitch_nm);
    return out;
  }

  // Horizontal wires per track.
  const int wmax = *std::max_element(cfg.wire_widths.begin(), cfg.wire_widths.end());
  const int offset = b.snap(b.uniform(2, cfg.track_pitch - 2));
  std::vector<std::vector<Rect>> tracks;
  for (int y = offset; y + wmax <= cfg.size; y += cfg.track_pitch) {
    tracks.emplace_back();
    if (b.unit() >= cfg.density) continue;
    const int w = cfg.wire_widths[b.uniform(0, static_cast<int>(cfg.wire_widths.size()) - 1)];
    const int yc = y + (wmax - w) / 2;
    int x = b.snap(b.uniform(-cfg.size / 4, cfg.size / 3));
    while (x < cfg.size - cfg.rules.min_width) {
      const int len = b.snap(b.uniform(cfg.size / 6, cfg.size));
      Rect r{x, yc, x + len, yc + w};
      if (b.try_add(r)) tracks.back().push_back(b.rects_.back());
      x += len + b.snap(b.uniform(cfg.rules.min_spacing + 4, cfg.size / 3));
    }
  }

  // Vertical jogs joining overlapping wires of neighbouring tracks.
  for (size_t t = 0; t + 1 < tracks.size(); ++t) {
    for (const Rect& a : tracks[t])
      for (const Rect& c : tracks[t + 1]) {
        const int lo = std::max(a.x0, c.x0), hi = std::min(a.x1, c.x1);
        const int w = cfg.wire_widths[b.uniform(0, static_cast<int>(cfg.wire_widths.size()) - 1)];
        if (hi - lo < w || b.unit() >= cfg.jog_rate) continue;
        const int x = b.snap(b.uniform(lo, hi - w));
        Rect jog{x, a.y0, x + w, c.y1, true};
        b.try_add(jog);
      }
  }

  if (plant) {
    std::vector<Rect> wires;
    for (const auto& r : b.rects_)
      if (!r.jog) wires.push_back(r);
    // Visit wires in a seeded order; prefer the defect kind drawn first.
    std::shuffle(wires.begin(), wires.end(), b.rng_);
    const bool neck_first = b.rng_() & 1;
    PlantedDefect d;
    bool done = false;
    for (int pass = 0; pass < 2 && !done; ++pass) {
      const bool neck = (pass == 0) == neck_first;
      for (const Rect& w : wires) {
        if (neck ? plant_neck(b, w, d) : plant_gap(b, w, d)) {
          done = true;
          break;
        }
      }
    }
    if (done) out.defects.push_back(d);
  }

  Bits px = std::move(b.bits_);
  if (transpose) {
    px = Bits(px.transpose());
    for (auto& d : out.defects) d.bbox = {d.bbox.y_min, d.bbox.x_min, d.bbox.y_max, d.bbox.x_max};
  }
  out.raster = BinaryRaster(std::move(px), cfg.pitch_nm);
  return out;
}

}  // namespace lmt
