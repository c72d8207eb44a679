#include "xis2/losses.hpp"

#include <malloc.h>

#include <cmath>
#include <sstream>

namespace xis2 {

namespace {
// Large activation buffers churn every step; keep them on the heap instead
// of round-tripping through mmap, whose pages the kernel re-zeroes on every
// allocation.
struct MallocTuning {
    MallocTuning() {
        mallopt(M_MMAP_THRESHOLD, 512 * 1024 * 1024);
        mallopt(M_TRIM_THRESHOLD, 512 * 1024 * 1024);
    }
};
const MallocTuning malloc_tuning;
}  // namespace

namespace {
void put(std::ostringstream& os, const char* key, double v, bool last = false) {
    os << "\"" << key << "\":";
    if (std::isfinite(v))
        os << v;
    else
        os << "\"" << (std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf")) << "\"";
    if (!last) os << ",";
}
}  // namespace

std::string LossReport::json_line() const {
    std::ostringstream os;
    os.precision(10);
    os << "{\"step\":" << step << ",";
    put(os, "adv_g", adv_g);
    put(os, "adv_d", adv_d);
    put(os, "mel", mel);
    put(os, "pitch", pitch);
    put(os, "vuv", vuv);
    put(os, "dur", dur);
    put(os, "feature", feature);
    put(os, "total_g", total_g);
    put(os, "total_d", total_d);
    put(os, "lr", lr, true);
    os << "}";
    return os.str();
}

bool LossReport::finite() const {
    for (double v : {adv_g, adv_d, mel, pitch, vuv, dur, feature, total_g, total_d})
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace xis2
