#pragma once

#include <cstdint>

#include "lithomt/corpus/process.hpp"

namespace lmt {

// Zero-padded convolution of a binary mask with a (symmetric) kernel.
IntensityRaster aerial_image(const BinaryRaster& mask, const IntensityRaster& kernel);

// contour = [dose * (kernel * mask) >= calibration * resist_threshold]
BinaryRaster simulate_contour(const BinaryRaster& mask, const ProcessCondition& cond,
                              const OpticsConfig& optics = {});

// Pixel-space edge biasing OPC. Each round grows the mask boundary next to
// under-printed pixels and trims it next to over-printed ones; a round that
// does not reduce the print error ends the loop.
BinaryRaster run_opc(const BinaryRaster& layout, const ProcessCondition& cond, int iterations,
                     const OpticsConfig& optics = {});

// Pixels where the printed contour and the target disagree.
long print_error(const BinaryRaster& contour, const BinaryRaster& target);

// Number of simulate_contour calls made by this process.
std::uint64_t simulation_call_count();

}  // namespace lmt
