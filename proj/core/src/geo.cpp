#include "memo/geo.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace memo::geo {

double haversine_m(LatLon a, LatLon b) noexcept {
    constexpr double rad = std::numbers::pi / 180.0;
    const double dlat = (b.lat - a.lat) * rad;
    const double dlon = (b.lon - a.lon) * rad;
    const double s1 = std::sin(dlat / 2.0);
    const double s2 = std::sin(dlon / 2.0);
    // Symmetric in (a, b): both squared sines and the cosine product commute.
    double h = s1 * s1 + std::cos(a.lat * rad) * std::cos(b.lat * rad) * s2 * s2;
    h = std::clamp(h, 0.0, 1.0);
    return 2.0 * kEarthRadiusMeters * std::asin(std::sqrt(h));
}

}  // namespace memo::geo
