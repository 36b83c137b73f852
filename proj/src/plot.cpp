#include "gsr/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace gsr {
namespace {

// 3x5 bitmap glyphs for "0123456789.-e".
const char* glyph(char c) {
    switch (c) {
    case '0': return "111101101101111";
    case '1': return "010110010010111";
    case '2': return "111001111100111";
    case '3': return "111001111001111";
    case '4': return "101101111001001";
    case '5': return "111100111001111";
    case '6': return "111100111101111";
    case '7': return "111001010010010";
    case '8': return "111101111101111";
    case '9': return "111101111001111";
    case '.': return "000000000000010";
    case '-': return "000000111000000";
    case 'e': return "111101110100111";
    default: return "000000000000000";
    }
}

void draw_text(Image& img, int x, int y, const std::string& text, const Vec3& color) {
    for (std::size_t ci = 0; ci < text.size(); ++ci) {
        const char* g = glyph(text[ci]);
        for (int gy = 0; gy < 5; ++gy) {
            for (int gx = 0; gx < 3; ++gx) {
                if (g[gy * 3 + gx] != '1') continue;
                const int px = x + static_cast<int>(ci) * 4 + gx;
                const int py = y + gy;
                if (px < 0 || py < 0 || px >= img.width || py >= img.height) continue;
                for (int c = 0; c < 3; ++c) img.at(py, px, c) = color[c];
            }
        }
    }
}

void draw_line(Image& img, double x0, double y0, double x1, double y1, const Vec3& color) {
    const int n = static_cast<int>(std::ceil(std::max(std::abs(x1 - x0), std::abs(y1 - y0)))) + 1;
    for (int i = 0; i <= n; ++i) {
        const double t = static_cast<double>(i) / n;
        const int x = static_cast<int>(std::lround(x0 + t * (x1 - x0)));
        const int y = static_cast<int>(std::lround(y0 + t * (y1 - y0)));
        if (x < 0 || y < 0 || x >= img.width || y >= img.height) continue;
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = color[c];
    }
}

std::string format_tick(double v) {
    char buf[32];
    if (v != 0.0 && (std::abs(v) < 1e-3 || std::abs(v) >= 1e4)) {
        std::snprintf(buf, sizeof(buf), "%.1e", v);
    } else {
        std::snprintf(buf, sizeof(buf), "%.3g", v);
    }
    return buf;
}

} // namespace

Image render_line_plot(const std::vector<double>& xs, const std::vector<double>& ys,
                       int width, int height) {
    Image img(width, height, 3);
    std::fill(img.data.begin(), img.data.end(), 1.0);
    if (xs.empty() || xs.size() != ys.size()) return img;

    const int ml = 56, mr = 16, mt = 16, mb = 32; // margins
    const Vec3 black{0, 0, 0}, blue{0.1, 0.25, 0.8};

    double xmin = *std::min_element(xs.begin(), xs.end());
    double xmax = *std::max_element(xs.begin(), xs.end());
    double ymin = *std::min_element(ys.begin(), ys.end());
    double ymax = *std::max_element(ys.begin(), ys.end());
    if (xmax == xmin) xmax = xmin + 1.0;
    if (ymax == ymin) ymax = ymin + 1.0;
    ymin = std::min(ymin, 0.0); // anchor at zero for timing plots

    auto px = [&](double x) {
        return ml + (x - xmin) / (xmax - xmin) * (width - ml - mr);
    };
    auto py = [&](double y) {
        return height - mb - (y - ymin) / (ymax - ymin) * (height - mt - mb);
    };

    draw_line(img, ml, mt, ml, height - mb, black);
    draw_line(img, ml, height - mb, width - mr, height - mb, black);

    for (std::size_t i = 0; i < xs.size(); ++i) {
        draw_line(img, px(xs[i]), height - mb, px(xs[i]), height - mb + 3, black);
        const std::string label = format_tick(xs[i]);
        draw_text(img, static_cast<int>(px(xs[i])) - static_cast<int>(label.size()) * 2,
                  height - mb + 6, label, black);
    }
    for (int k = 0; k <= 4; ++k) {
        const double v = ymin + (ymax - ymin) * k / 4.0;
        draw_line(img, ml - 3, py(v), ml, py(v), black);
        const std::string label = format_tick(v);
        draw_text(img, 4, static_cast<int>(py(v)) - 2, label, black);
    }

    for (std::size_t i = 0; i + 1 < xs.size(); ++i) {
        draw_line(img, px(xs[i]), py(ys[i]), px(xs[i + 1]), py(ys[i + 1]), blue);
    }
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const int cx = static_cast<int>(std::lround(px(xs[i])));
        const int cy = static_cast<int>(std::lround(py(ys[i])));
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                const int x = cx + dx, y = cy + dy;
                if (x < 0 || y < 0 || x >= width || y >= height) continue;
                for (int c = 0; c < 3; ++c) img.at(y, x, c) = blue[c];
            }
    }
    return img;
}

} // namespace gsr
