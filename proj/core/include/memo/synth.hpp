#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "memo/config.hpp"
#include "memo/data.hpp"
#include "memo/geo.hpp"

namespace memo::synth {

struct GeoExtent {
    double lat_min = 39.20;
    double lat_max = 39.40;
    double lon_min = -76.75;
    double lon_max = -76.50;
};

struct SynthConfig {
    std::size_t num_users = 200;
    std::size_t num_pois = 50;  // venues; anchor POIs are extra
    std::size_t num_relation_types = 2;
    std::size_t events_per_user = 50;
    // Per relation type: expected fraction of users sharing a group, so group
    // size is round(density * num_users), at least 2.
    std::vector<double> relation_density = {0.015, 0.04};
    double mixing = 0.8;  // lambda
    GeoExtent extent;
    std::uint64_t seed = 1;

    double short_gap_prob = 0.5;     // gap ~ U[5, 50] min, else U[2, 24] h
    double nearby_prob = 0.7;        // after a short gap, stay in the current neighborhood
    std::size_t pois_per_area = 5;   // venues sharing a neighborhood
    double area_radius_m = 120.0;
    double preference_concentration = 0.3;  // Dirichlet parameter of private preferences

    // Home/office anchor POIs visited on weekday nights / working hours.
    bool anchor_visits = false;
    double anchor_prob = 0.9;
    double anchor_jitter_m = 0.0;

    data::Timeline timeline;

    void validate() const;
    static SynthConfig from_config(const KeyValueConfig& cfg);
};

struct GroundTruth {
    // Per relation type, the group index of each user.
    std::vector<std::vector<std::size_t>> group_of;
    std::vector<geo::LatLon> home;  // per user (meaningful with anchor_visits)
    std::vector<geo::LatLon> work;
    // Per relation type, per user, choice distribution over that type's block.
    std::vector<std::vector<std::vector<double>>> choice;
    std::vector<std::vector<data::PoiId>> block_pois;  // per relation type
};

struct SynthResult {
    data::Dataset dataset;
    GroundTruth truth;
};

SynthResult generate(const SynthConfig& config);

}  // namespace memo::synth
