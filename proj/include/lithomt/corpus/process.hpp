#pragma once

#include <string>

#include "lithomt/raster.hpp"

namespace lmt {

enum class SourceType { annular, circular, bullseye };

std::string to_string(SourceType s);
SourceType parse_source_type(const std::string& name);

// Optical oracle parameters. The effective resist threshold is
// calibration * resist_threshold; the blur width grows linearly with focus.
struct OpticsConfig {
  double sigma0 = 1.5;        // px
  double focus_gain = 0.02;   // px per nm
  double calibration = 4.2;
};

struct ProcessCondition {
  SourceType source = SourceType::circular;
  double resist_threshold = 0.0923125;
  double focus_nm = 0.0;
  double dose = 1.0;
  IntensityRaster source_raster;  // S x S pupil picture in [0,1]

  // Throws ConfigError when the invariants are broken.
  void validate() const;
  std::string label() const;  // e.g. "circular_0.0923125_50_1.2"

  friend bool operator==(const ProcessCondition& a, const ProcessCondition& b) {
    return a.source == b.source && a.resist_threshold == b.resist_threshold && a.focus_nm == b.focus_nm &&
           a.dose == b.dose;
  }
};

ProcessCondition make_condition(SourceType source, double threshold, double focus_nm, double dose,
                                int source_size = 32);

// Pupil-shaped picture of the illumination source; depends only on (type, size).
IntensityRaster source_raster(SourceType source, int size);

// Blur width of the circular kernel for a given focus.
double kernel_sigma(const ProcessCondition& cond, const OpticsConfig& optics);

// Smallest odd size that holds the kernel support out to three widths.
int default_kernel_size(const ProcessCondition& cond, const OpticsConfig& optics);

// Normalized (sum = 1), 4-fold symmetric convolution kernel of odd `size`.
IntensityRaster source_kernel(const ProcessCondition& cond, int size, const OpticsConfig& optics = {});

}  // namespace lmt
