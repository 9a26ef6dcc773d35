#pragma once

#include "starmt/core/tensor.hpp"

#include <array>
#include <string>
#include <vector>

namespace starmt::eval {

// Minimal raster canvas for rendering curve plots straight to PNG: filled
// background, polylines, plus-markers and a 5x7 uppercase bitmap font.
class Canvas {
public:
    using Color = std::array<real, 3>;

    Canvas(int width, int height, Color background = {1, 1, 1});

    int width() const { return w_; }
    int height() const { return h_; }

    void set_pixel(int x, int y, const Color& c);
    void line(real x0, real y0, real x1, real y1, const Color& c);
    void polyline(const std::vector<std::pair<real, real>>& pts, const Color& c);
    void marker_plus(real x, real y, int half_size, const Color& c);
    // Uppercase letters, digits and ".-+=()/" at 5x7 per glyph (6 px advance).
    void text(int x, int y, const std::string& s, const Color& c);

    void save_png(const std::string& path) const;

private:
    int w_, h_;
    Tensor img_; // [H,W,3]
};

} // namespace starmt::eval
