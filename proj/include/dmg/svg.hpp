#pragma once

#include <string>

#include "dmg/tensor.hpp"

namespace dmg {

// Standalone SVG per motion: root xy trajectory on the left, limb-channel
// strip chart on the right. No external assets.
void export_motion_svg(const Array<f32>& motion, const std::string& path);

// Per-frame CSV: frame, ch0..ch5.
void export_motion_csv(const Array<f32>& motion, const std::string& path);

} // namespace dmg
