#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "memo/data.hpp"
#include "memo/geo.hpp"

namespace memo::infer {

enum class DayWindow { Night, Day };

// Seconds of the local day, taken from the raw timestamp modulo 86,400.
// A window with start > end wraps past midnight.
struct WindowSpec {
    std::int64_t night_start = 20 * 3600;
    std::int64_t night_end = 8 * 3600;
    std::int64_t day_start = 9 * 3600;
    std::int64_t day_end = 17 * 3600;

    bool contains(DayWindow w, std::int64_t time) const;
};

// Day 0 of the timestamp epoch is a Thursday.
bool is_weekday(std::int64_t time);

struct Visit {
    std::int64_t time = 0;
    geo::LatLon where;
};

struct StopPoint {
    data::UserId user = 0;
    geo::LatLon centroid;
    std::size_t count = 0;
};

// Most visited stop point among the user's weekday visits in `window`, found
// by greedy radius clustering over visits in (time, lat, lon) order.
std::optional<StopPoint> detect_anchor(data::UserId user, std::span<const Visit> visits, DayWindow window,
                                       double cluster_radius_m, const WindowSpec& spec = {});

struct InferOptions {
    double cluster_radius_m = 30.0;
    double colocation_radius_m = 50.0;
    WindowSpec windows;
};

struct Anchors {
    std::vector<std::optional<StopPoint>> home;
    std::vector<std::optional<StopPoint>> work;
};

Anchors detect_anchors(const data::Dataset& dataset, const InferOptions& options);

// Type 0 (family) for shared homes, type 1 (colleague) for shared workplaces.
std::vector<data::RelationTriple> infer_relations(const data::Dataset& dataset, const InferOptions& options = {});

}  // namespace memo::infer
