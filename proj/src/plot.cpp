#include "xis2/plot.hpp"

#include <algorithm>
#include <fstream>

namespace xis2 {

namespace {

// viridis anchors, interpolated linearly
constexpr double kViridis[9][3] = {
    {0.267, 0.005, 0.329}, {0.283, 0.141, 0.458}, {0.254, 0.265, 0.530},
    {0.207, 0.372, 0.553}, {0.164, 0.471, 0.558}, {0.128, 0.567, 0.551},
    {0.135, 0.659, 0.518}, {0.477, 0.821, 0.318}, {0.993, 0.906, 0.144}};

void colormap(double v, unsigned char* rgb) {
    v = std::clamp(v, 0.0, 1.0) * 8.0;
    const int i = std::min(7, static_cast<int>(v));
    const double f = v - i;
    for (int c = 0; c < 3; ++c) {
        const double x = kViridis[i][c] + f * (kViridis[i + 1][c] - kViridis[i][c]);
        rgb[c] = static_cast<unsigned char>(std::lround(std::clamp(x, 0.0, 1.0) * 255.0));
    }
}

}  // namespace

void render_mel_ppm(const TensorT<double>& mel, const std::string& path,
                    const std::optional<BandSpec>& band) {
    check_shape(mel.rank() == 2, "plot: expected rank-2 mel, got " + shape_str(mel.shape()));
    int64_t start = 0, end = mel.dim(1);
    if (band) {
        if (band->start < 0 || band->end > mel.dim(1) || band->start >= band->end)
            throw ConfigError("plot: band [" + std::to_string(band->start) + "," +
                              std::to_string(band->end) + ") outside mel width " +
                              std::to_string(mel.dim(1)));
        start = band->start;
        end = band->end;
    }
    const int64_t t = mel.dim(0), h = end - start, c = mel.dim(1);
    double lo = mel.data()[static_cast<size_t>(start)], hi = lo;
    for (int64_t i = 0; i < t; ++i)
        for (int64_t b = start; b < end; ++b) {
            const double v = mel.data()[static_cast<size_t>(i * c + b)];
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    const double span = hi > lo ? hi - lo : 1.0;

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("plot: cannot write " + path);
    out << "P6\n" << t << " " << h << "\n255\n";
    std::vector<unsigned char> row(static_cast<size_t>(t) * 3);
    for (int64_t y = 0; y < h; ++y) {
        const int64_t b = end - 1 - y;  // highest frequency on top
        for (int64_t i = 0; i < t; ++i) {
            const double v = (mel.data()[static_cast<size_t>(i * c + b)] - lo) / span;
            colormap(v, row.data() + static_cast<size_t>(i) * 3);
        }
        out.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(row.size()));
    }
    if (!out) throw IoError("plot: write failed for " + path);
}

}  // namespace xis2
