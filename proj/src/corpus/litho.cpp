#include "lithomt/corpus/litho.hpp"

#include <atomic>

#include "lithomt/error.hpp"
#include "lithomt/morphology.hpp"

namespace lmt {
namespace {

std::atomic<std::uint64_t> g_simulations{0};

constexpr int kBandRadius = 2;

}  // namespace

std::uint64_t simulation_call_count() { return g_simulations.load(); }

IntensityRaster aerial_image(const BinaryRaster& mask, const IntensityRaster& kernel) {
  const long rows = mask.rows(), cols = mask.cols();
  const long h = kernel.rows() / 2;
  IntensityRaster out = IntensityRaster::Zero(rows, cols);
  for (long r = 0; r < rows; ++r) {
    for (long c = 0; c < cols; ++c) {
      if (!mask.pixels(r, c)) continue;
      const long r0 = std::max(0L, r - h), r1 = std::min(rows - 1, r + h);
      const long c0 = std::max(0L, c - h), c1 = std::min(cols - 1, c + h);
      out.block(r0, c0, r1 - r0 + 1, c1 - c0 + 1) += kernel.block(r0 - r + h, c0 - c + h, r1 - r0 + 1, c1 - c0 + 1);
    }
  }
  return out;
}

BinaryRaster simulate_contour(const BinaryRaster& mask, const ProcessCondition& cond, const OpticsConfig& optics) {
  cond.validate();
  g_simulations.fetch_add(1);
  const IntensityRaster kernel = source_kernel(cond, default_kernel_size(cond, optics), optics);
  const IntensityRaster intensity = aerial_image(mask, kernel) * cond.dose;
  const double thr = optics.calibration * cond.resist_threshold;
  return BinaryRaster((intensity >= thr).cast<std::uint8_t>(), mask.pitch_nm);
}

long print_error(const BinaryRaster& contour, const BinaryRaster& target) {
  if (!contour.same_shape(target)) throw InputError("print_error: raster shape mismatch");
  return (contour.pixels != target.pixels).cast<long>().sum();
}

BinaryRaster run_opc(const BinaryRaster& layout, const ProcessCondition& cond, int iterations,
                     const OpticsConfig& optics) {
  if (iterations < 0) throw ConfigError("OPC iteration count must be non-negative");
  BinaryRaster mask = layout;
  if (iterations == 0 || layout.empty()) return mask;

  BinaryRaster contour = simulate_contour(mask, cond, optics);
  long error = print_error(contour, layout);
  const int band = 2 * kBandRadius + 1;
  for (int it = 0; it < iterations && error > 0; ++it) {
    const Bits under = (layout.pixels != 0 && contour.pixels == 0).cast<std::uint8_t>();
    const Bits over = (contour.pixels != 0 && layout.pixels == 0).cast<std::uint8_t>();
    const Bits outer = (morph::dilate(mask.pixels, 3) != 0 && mask.pixels == 0).cast<std::uint8_t>();
    const Bits inner = morph::edge_regions(mask.pixels);
    const Bits grow = (outer != 0 && morph::dilate(under, band) != 0).cast<std::uint8_t>();
    const Bits trim = (inner != 0 && morph::dilate(over, band) != 0).cast<std::uint8_t>();

    BinaryRaster next = mask;
    next.pixels = ((mask.pixels != 0 || grow != 0) && trim == 0).cast<std::uint8_t>();
    // Drop one-pixel slivers and notches.
    next.pixels = morph::close(morph::open(next.pixels, 2, morph::Pad::one), 2);
    if (next == mask) break;
    BinaryRaster next_contour = simulate_contour(next, cond, optics);
    const long next_error = print_error(next_contour, layout);
    if (next_error >= error) break;
    mask = std::move(next);
    contour = std::move(next_contour);
    error = next_error;
  }
  return mask;
}

}  // namespace lmt
