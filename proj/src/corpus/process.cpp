#include "lithomt/corpus/process.hpp"

#include <cmath>
#include <sstream>

#include "lithomt/error.hpp"

namespace lmt {

std::string to_string(SourceType s) {
  switch (s) {
    case SourceType::annular: return "annular";
    case SourceType::circular: return "circular";
    case SourceType::bullseye: return "bullseye";
  }
  return "unknown";
}

SourceType parse_source_type(const std::string& name) {
  if (name == "annular") return SourceType::annular;
  if (name == "circular") return SourceType::circular;
  if (name == "bullseye" || name == "bulls_eye") return SourceType::bullseye;
  throw ConfigError("unknown source type '" + name + "'");
}

void ProcessCondition::validate() const {
  if (!(dose > 0)) throw ConfigError("dose must be positive");
  if (!(resist_threshold > 0 && resist_threshold < 1)) throw ConfigError("resist threshold must lie in (0,1)");
  if (!(focus_nm >= 0)) throw ConfigError("focus must be non-negative");
}

std::string ProcessCondition::label() const {
  std::ostringstream os;
  os << to_string(source) << "_" << resist_threshold << "_" << focus_nm << "_" << dose;
  return os.str();
}

ProcessCondition make_condition(SourceType source, double threshold, double focus_nm, double dose,
                                int source_size) {
  ProcessCondition c;
  c.source = source;
  c.resist_threshold = threshold;
  c.focus_nm = focus_nm;
  c.dose = dose;
  c.validate();
  c.source_raster = source_raster(source, source_size);
  return c;
}

IntensityRaster source_raster(SourceType source, int size) {
  if (size <= 0) throw ConfigError("source raster size must be positive");
  IntensityRaster img = IntensityRaster::Zero(size, size);
  const double c = (size - 1) / 2.0;
  const double rmax = size / 2.0;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double r = std::hypot(x - c, y - c) / rmax;
      bool on = false;
      switch (source) {
        case SourceType::circular: on = r <= 0.5; break;
        case SourceType::annular: on = r >= 0.5 && r <= 0.85; break;
        case SourceType::bullseye: on = r <= 0.3 || (r >= 0.6 && r <= 0.85); break;
      }
      img(y, x) = on ? 1.0 : 0.0;
    }
  return img;
}

double kernel_sigma(const ProcessCondition& cond, const OpticsConfig& optics) {
  return optics.sigma0 + optics.focus_gain * cond.focus_nm;
}

namespace {

constexpr double kOuterScale = 1.3;
constexpr double kInnerWeight = 0.3;

IntensityRaster gaussian(int size, double sigma) {
  const int h = size / 2;
  IntensityRaster g(size, size);
  for (int y = -h; y <= h; ++y)
    for (int x = -h; x <= h; ++x)
      g(y + h, x + h) = std::exp(-(x * x + y * y) / (2 * sigma * sigma)) / (2 * M_PI * sigma * sigma);
  return g;
}

IntensityRaster normalized(const IntensityRaster& k) { return k / k.sum(); }

}  // namespace

int default_kernel_size(const ProcessCondition& cond, const OpticsConfig& optics) {
  const double sigma = kernel_sigma(cond, optics);
  const double reach = cond.source == SourceType::circular ? 3 * sigma : 3 * kOuterScale * sigma;
  return 2 * static_cast<int>(std::ceil(reach)) + 1;
}

IntensityRaster source_kernel(const ProcessCondition& cond, int size, const OpticsConfig& optics) {
  if (size <= 0 || size % 2 == 0) throw ConfigError("kernel size must be odd and positive");
  const double sigma = kernel_sigma(cond, optics);
  if (!(sigma > 0)) throw ConfigError("kernel width must be positive");
  const IntensityRaster circular = normalized(gaussian(size, sigma));
  auto annular = [&] {
    IntensityRaster d = gaussian(size, kOuterScale * sigma) - kInnerWeight * gaussian(size, sigma);
    return normalized(d.max(0.0));
  };
  IntensityRaster k;
  switch (cond.source) {
    case SourceType::circular: k = circular; break;
    case SourceType::annular: k = annular(); break;
    case SourceType::bullseye: k = 0.6 * circular + 0.4 * annular(); break;
  }
  return normalized(k);
}

}  // namespace lmt
