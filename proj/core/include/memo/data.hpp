#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "memo/geo.hpp"

namespace memo::data {

using UserId = std::size_t;
using PoiId = std::size_t;

struct Poi {
    PoiId id = 0;
    double longitude = 0.0;
    double latitude = 0.0;

    geo::LatLon coords() const noexcept { return {latitude, longitude}; }
};

struct CheckinEvent {
    UserId user = 0;
    PoiId poi = 0;
    std::int64_t time = 0;  // seconds
    std::size_t bucket = 0;

    bool operator==(const CheckinEvent&) const = default;
};

// Stored with a < b.
struct RelationTriple {
    UserId a = 0;
    UserId b = 0;
    std::size_t type = 0;

    auto operator<=>(const RelationTriple&) const = default;
};

struct Timeline {
    std::int64_t bucket_length = 13'000;
    std::size_t num_buckets = 400;

    // floor(time / bucket_length), clamped into the last bucket.
    std::size_t bucket_of(std::int64_t time) const;
};

struct Dataset {
    std::size_t num_users = 0;
    std::vector<Poi> pois;
    std::vector<CheckinEvent> events;  // sorted by (time, user, poi)
    std::vector<RelationTriple> relations;
    std::size_t num_relation_types = 0;
    Timeline timeline;

    std::size_t num_pois() const noexcept { return pois.size(); }
};

// Orders events by time, breaking ties by (user, poi).
bool event_before(const CheckinEvent& x, const CheckinEvent& y) noexcept;
void sort_events(std::vector<CheckinEvent>& events);

// Checkins CSV: `user_id,poi_id,timestamp,lat,lon`. Users are [0, max id];
// POI ids must be dense. Timestamps must be non-negative.
Dataset load_checkins(const std::filesystem::path& path, std::int64_t bucket_length = 13'000,
                      std::size_t num_buckets = 400);
void write_checkins(const Dataset& dataset, const std::filesystem::path& path);

// Relations CSV: `user_a,user_b,relation_type`. Output is canonical (a < b),
// sorted and free of duplicates.
std::vector<RelationTriple> load_relations(const std::filesystem::path& path, std::size_t num_types);
void write_relations(std::span<const RelationTriple> relations, const std::filesystem::path& path);
std::vector<RelationTriple> canonicalize(std::vector<RelationTriple> relations);

// Both files, with relations checked against the user count.
Dataset load_dataset(const std::filesystem::path& checkins, const std::filesystem::path& relations,
                     std::size_t num_types, const Timeline& timeline);

enum class SplitMode { Global, PerUser };

struct SplitFractions {
    double train = 0.8;
    double validation = 0.1;
    double test = 0.1;
};

struct Split {
    std::vector<CheckinEvent> train;
    std::vector<CheckinEvent> validation;
    std::vector<CheckinEvent> test;
};

// Global mode cuts the time-ordered stream at floor(0.8 N) and floor(0.9 N).
// PerUser mode applies the same arithmetic to each user's trajectory and
// re-sorts each part.
Split chronological_split(const Dataset& dataset, SplitFractions fractions = {},
                          SplitMode mode = SplitMode::Global);

}  // namespace memo::data
