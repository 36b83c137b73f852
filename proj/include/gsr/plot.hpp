#pragma once

#include <string>
#include <vector>

#include "gsr/types.hpp"

namespace gsr {

// Minimal line plot (axes, numeric ticks, one polyline) for bench reports.
Image render_line_plot(const std::vector<double>& xs, const std::vector<double>& ys,
                       int width = 480, int height = 320);

} // namespace gsr
