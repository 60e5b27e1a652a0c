#include "dmg/svg.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "dmg/data.hpp"

namespace dmg {

namespace {

std::string fmt(f64 v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << v;
    return os.str();
}

} // namespace

void export_motion_svg(const Array<f32>& motion, const std::string& path) {
    if (motion.shape.size() != 2 || motion.shape[1] != kChannels)
        fail("export_motion_svg: expected [L,", kChannels, "], got ", shape_str(motion.shape));
    int length = motion.shape[0];
    auto ch = [&](int t, int c) { return static_cast<f64>(motion.data[static_cast<size_t>(t) * kChannels + c]); };

    // left panel: trajectory, square viewport
    f64 min_x = ch(0, 0), max_x = ch(0, 0), min_y = ch(0, 1), max_y = ch(0, 1);
    for (int t = 0; t < length; ++t) {
        min_x = std::min(min_x, ch(t, 0));
        max_x = std::max(max_x, ch(t, 0));
        min_y = std::min(min_y, ch(t, 1));
        max_y = std::max(max_y, ch(t, 1));
    }
    f64 span = std::max({max_x - min_x, max_y - min_y, 1e-3});
    f64 cx = (min_x + max_x) / 2, cy = (min_y + max_y) / 2;
    const f64 panel = 260, pad = 24;
    auto tx = [&](f64 x) { return pad + (x - cx + span / 2 * 1.1) / (span * 1.1) * panel; };
    auto ty = [&](f64 y) { return pad + panel - (y - cy + span / 2 * 1.1) / (span * 1.1) * panel; };

    // right panel: limb channels against time
    f64 lim = 0.1;
    for (int t = 0; t < length; ++t)
        for (int c = 2; c < kChannels; ++c) lim = std::max(lim, std::abs(ch(t, c)));
    const f64 strip_x0 = panel + 3 * pad, strip_w = 300, strip_h = panel;
    auto sx = [&](int t) { return strip_x0 + static_cast<f64>(t) / (length - 1) * strip_w; };
    auto sy = [&](f64 v) { return pad + strip_h / 2 - v / (2.2 * lim) * strip_h; };

    static const char* colors[4] = {"#d62728", "#ff9896", "#1f77b4", "#aec7e8"};
    static const char* names[4] = {"left a", "left b", "right a", "right b"};

    std::ofstream f(path, std::ios::trunc);
    if (!f) fail("export_motion_svg: cannot open '", path, "'");
    f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << strip_x0 + strip_w + pad
      << "\" height=\"" << panel + 2 * pad << "\" font-family=\"monospace\" font-size=\"11\">\n";
    f << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

    f << "<rect x=\"" << pad << "\" y=\"" << pad << "\" width=\"" << panel << "\" height=\""
      << panel << "\" fill=\"none\" stroke=\"#999\"/>\n";
    f << "<text x=\"" << pad << "\" y=\"" << pad - 8 << "\">root trajectory (xy)</text>\n";
    f << "<polyline fill=\"none\" stroke=\"#2ca02c\" stroke-width=\"1.5\" points=\"";
    for (int t = 0; t < length; ++t) f << fmt(tx(ch(t, 0))) << ',' << fmt(ty(ch(t, 1))) << ' ';
    f << "\"/>\n";
    f << "<circle cx=\"" << fmt(tx(ch(0, 0))) << "\" cy=\"" << fmt(ty(ch(0, 1)))
      << "\" r=\"3\" fill=\"#2ca02c\"/>\n";

    f << "<rect x=\"" << strip_x0 << "\" y=\"" << pad << "\" width=\"" << strip_w
      << "\" height=\"" << strip_h << "\" fill=\"none\" stroke=\"#999\"/>\n";
    f << "<text x=\"" << strip_x0 << "\" y=\"" << pad - 8 << "\">limb channels</text>\n";
    f << "<line x1=\"" << strip_x0 << "\" y1=\"" << sy(0) << "\" x2=\"" << strip_x0 + strip_w
      << "\" y2=\"" << sy(0) << "\" stroke=\"#ddd\"/>\n";
    for (int c = 2; c < kChannels; ++c) {
        f << "<polyline fill=\"none\" stroke=\"" << colors[c - 2]
          << "\" stroke-width=\"1.2\" points=\"";
        for (int t = 0; t < length; ++t) f << fmt(sx(t)) << ',' << fmt(sy(ch(t, c))) << ' ';
        f << "\"/>\n";
        f << "<text x=\"" << strip_x0 + strip_w - 60 << "\" y=\"" << pad + 14 * (c - 1)
          << "\" fill=\"" << colors[c - 2] << "\">" << names[c - 2] << "</text>\n";
    }
    f << "</svg>\n";
    if (!f) fail("export_motion_svg: write failed for '", path, "'");
}

void export_motion_csv(const Array<f32>& motion, const std::string& path) {
    if (motion.shape.size() != 2 || motion.shape[1] != kChannels)
        fail("export_motion_csv: expected [L,", kChannels, "], got ", shape_str(motion.shape));
    std::ofstream f(path, std::ios::trunc);
    if (!f) fail("export_motion_csv: cannot open '", path, "'");
    f << "frame,root_x,root_y,left_a,left_b,right_a,right_b\n";
    int length = motion.shape[0];
    f << std::setprecision(9);
    for (int t = 0; t < length; ++t) {
        f << t;
        for (int c = 0; c < kChannels; ++c)
            f << ',' << motion.data[static_cast<size_t>(t) * kChannels + c];
        f << '\n';
    }
    if (!f) fail("export_motion_csv: write failed for '", path, "'");
}

} // namespace dmg
