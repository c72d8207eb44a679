#ifndef XIS2_PLOT_HPP
#define XIS2_PLOT_HPP

// Mel heatmaps as plain binary PPM (P6) so plotting needs no image library.

#include <optional>
#include <string>

#include "xis2/discriminator.hpp"
#include "xis2/tensor.hpp"

namespace xis2 {

// Width = frame count, height = bin count (after the optional band crop),
// frequency ascending upward, viridis colormap.
void render_mel_ppm(const TensorT<double>& mel, const std::string& path,
                    const std::optional<BandSpec>& band = std::nullopt);

}  // namespace xis2

#endif
