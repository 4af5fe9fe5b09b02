#include "memo/relation_infer.hpp"

#include <algorithm>
#include <tuple>

#include "memo/error.hpp"

namespace memo::infer {

namespace {

constexpr std::int64_t kDay = 86'400;

bool in_range(std::int64_t s, std::int64_t start, std::int64_t end) {
    return start <= end ? (s >= start && s < end) : (s >= start || s < end);
}

}  // namespace

bool WindowSpec::contains(DayWindow w, std::int64_t time) const {
    const std::int64_t s = ((time % kDay) + kDay) % kDay;
    return w == DayWindow::Night ? in_range(s, night_start, night_end) : in_range(s, day_start, day_end);
}

bool is_weekday(std::int64_t time) {
    const std::int64_t day = time >= 0 ? time / kDay : (time - kDay + 1) / kDay;
    return ((day + 3) % 7 + 7) % 7 < 5;
}

std::optional<StopPoint> detect_anchor(data::UserId user, std::span<const Visit> visits, DayWindow window,
                                       double cluster_radius_m, const WindowSpec& spec) {
    if (!(cluster_radius_m > 0.0)) throw ContractError("detect_anchor: cluster radius must be positive");

    std::vector<Visit> in_window;
    for (const auto& v : visits)
        if (is_weekday(v.time) && spec.contains(window, v.time)) in_window.push_back(v);
    if (in_window.empty()) return std::nullopt;
    std::sort(in_window.begin(), in_window.end(), [](const Visit& a, const Visit& b) {
        return std::tie(a.time, a.where.lat, a.where.lon) < std::tie(b.time, b.where.lat, b.where.lon);
    });

    struct Cluster {
        geo::LatLon centroid;
        std::size_t count;
    };
    std::vector<Cluster> clusters;
    for (const auto& v : in_window) {
        auto it = std::find_if(clusters.begin(), clusters.end(), [&](const Cluster& c) {
            return geo::haversine_m(c.centroid, v.where) <= cluster_radius_m;
        });
        if (it == clusters.end()) {
            clusters.push_back({v.where, 1});
            continue;
        }
        ++it->count;
        const double n = static_cast<double>(it->count);
        it->centroid.lat += (v.where.lat - it->centroid.lat) / n;
        it->centroid.lon += (v.where.lon - it->centroid.lon) / n;
    }
    // max_element keeps the first maximum, i.e. the earliest-created cluster.
    const auto best = std::max_element(clusters.begin(), clusters.end(),
                                       [](const Cluster& a, const Cluster& b) { return a.count < b.count; });
    return StopPoint{user, best->centroid, best->count};
}

Anchors detect_anchors(const data::Dataset& dataset, const InferOptions& options) {
    std::vector<std::vector<Visit>> per_user(dataset.num_users);
    for (const auto& e : dataset.events) per_user.at(e.user).push_back({e.time, dataset.pois.at(e.poi).coords()});
    Anchors a;
    a.home.resize(dataset.num_users);
    a.work.resize(dataset.num_users);
    for (data::UserId u = 0; u < dataset.num_users; ++u) {
        a.home[u] = detect_anchor(u, per_user[u], DayWindow::Night, options.cluster_radius_m, options.windows);
        a.work[u] = detect_anchor(u, per_user[u], DayWindow::Day, options.cluster_radius_m, options.windows);
    }
    return a;
}

std::vector<data::RelationTriple> infer_relations(const data::Dataset& dataset, const InferOptions& options) {
    if (!(options.cluster_radius_m > 0.0) || options.colocation_radius_m < 0.0) {
        throw ContractError("infer_relations: cluster radius must be positive and co-location radius non-negative");
    }
    const Anchors anchors = detect_anchors(dataset, options);
    std::vector<data::RelationTriple> out;
    auto pair_pass = [&](const std::vector<std::optional<StopPoint>>& points, std::size_t type) {
        for (data::UserId i = 0; i < points.size(); ++i) {
            if (!points[i]) continue;
            for (data::UserId j = i + 1; j < points.size(); ++j) {
                if (!points[j]) continue;
                if (geo::haversine_m(points[i]->centroid, points[j]->centroid) <= options.colocation_radius_m) {
                    out.push_back({i, j, type});
                }
            }
        }
    };
    pair_pass(anchors.home, 0);
    pair_pass(anchors.work, 1);
    return data::canonicalize(std::move(out));
}

}  // namespace memo::infer
