#pragma once

namespace memo::geo {

inline constexpr double kEarthRadiusMeters = 6'371'000.0;

struct LatLon {
    double lat = 0.0;  // degrees
    double lon = 0.0;  // degrees
};

// Great-circle distance in meters on a sphere of radius kEarthRadiusMeters.
double haversine_m(LatLon a, LatLon b) noexcept;

}  // namespace memo::geo
