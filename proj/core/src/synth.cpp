#include "memo/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>

#include "memo/error.hpp"

namespace memo::synth {

namespace {

constexpr double kMetersPerDegreeLat = 111'320.0;
constexpr std::int64_t kDay = 86'400;

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

std::size_t pick(Rng& rng, std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); }

std::size_t sample_index(Rng& rng, const std::vector<double>& weights) {
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    double u = uniform(rng, 0.0, total);
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (u < weights[i]) return i;
        u -= weights[i];
    }
    // Rounding fell off the end; return the last positive entry.
    for (std::size_t i = weights.size(); i-- > 0;)
        if (weights[i] > 0.0) return i;
    return weights.size() - 1;
}

std::vector<double> dirichlet(Rng& rng, std::size_t n, double alpha) {
    std::gamma_distribution<double> gamma(alpha, 1.0);
    std::vector<double> v(n);
    double total = 0.0;
    for (auto& x : v) {
        x = gamma(rng);
        total += x;
    }
    if (total <= 0.0) {
        v.assign(n, 1.0 / static_cast<double>(n));
        return v;
    }
    for (auto& x : v) x /= total;
    return v;
}

geo::LatLon offset(geo::LatLon c, double north_m, double east_m) {
    const double dlat = north_m / kMetersPerDegreeLat;
    const double dlon = east_m / (kMetersPerDegreeLat * std::cos(c.lat * std::numbers::pi / 180.0));
    return {c.lat + dlat, c.lon + dlon};
}

geo::LatLon random_point(Rng& rng, const GeoExtent& e) {
    return {uniform(rng, e.lat_min, e.lat_max), uniform(rng, e.lon_min, e.lon_max)};
}

geo::LatLon random_in_disk(Rng& rng, geo::LatLon c, double radius_m) {
    const double r = radius_m * std::sqrt(uniform(rng, 0.0, 1.0));
    const double theta = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    return offset(c, r * std::cos(theta), r * std::sin(theta));
}

bool is_weekday(std::int64_t t) { return (t / kDay + 3) % 7 < 5; }  // day 0 is a Thursday

bool in_night(std::int64_t t) {
    const auto s = t % kDay;
    return s >= 20 * 3600 || s < 8 * 3600;
}

bool in_work_hours(std::int64_t t) {
    const auto s = t % kDay;
    return s >= 9 * 3600 && s < 17 * 3600;
}

}  // namespace

void SynthConfig::validate() const {
    if (num_users == 0) throw ValidationError("synth: num_users must be positive");
    if (num_pois == 0) throw ValidationError("synth: num_pois must be positive");
    if (num_relation_types == 0) throw ValidationError("synth: num_relation_types must be positive");
    if (events_per_user == 0) throw ValidationError("synth: events_per_user must be positive");
    if (num_pois < num_relation_types) {
        throw ValidationError("synth: every relation type needs at least one POI in its block");
    }
    if (relation_density.size() != num_relation_types) {
        throw ValidationError("synth: relation_density needs one entry per relation type");
    }
    for (double d : relation_density)
        if (!(d > 0.0 && d < 1.0)) throw ValidationError("synth: relation densities must lie in (0, 1)");
    if (!(mixing >= 0.0 && mixing <= 1.0)) throw ValidationError("synth: lambda must lie in [0, 1]");
    if (!(extent.lat_min < extent.lat_max && extent.lon_min < extent.lon_max)) {
        throw ValidationError("synth: empty geo extent");
    }
    if (extent.lat_min < -90 || extent.lat_max > 90 || extent.lon_min < -180 || extent.lon_max > 180) {
        throw ValidationError("synth: geo extent outside valid coordinates");
    }
    for (double p : {short_gap_prob, nearby_prob, anchor_prob})
        if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("synth: probabilities must lie in [0, 1]");
    if (pois_per_area == 0 || !(preference_concentration > 0.0) || !(area_radius_m >= 0.0)) {
        throw ValidationError("synth: invalid layout parameters");
    }
}

SynthConfig SynthConfig::from_config(const KeyValueConfig& cfg) {
    SynthConfig c;
    auto count = [&](const char* key, std::size_t fallback) {
        const auto v = cfg.get_int(key, static_cast<std::int64_t>(fallback));
        if (v < 0) throw ValidationError(std::string("synth: ") + key + " must be non-negative");
        return static_cast<std::size_t>(v);
    };
    c.num_users = count("num_users", c.num_users);
    c.num_pois = count("num_pois", c.num_pois);
    c.num_relation_types = count("num_relation_types", c.num_relation_types);
    c.events_per_user = count("events_per_user", c.events_per_user);
    std::vector<double> default_density = c.relation_density;
    default_density.resize(c.num_relation_types, 0.02);
    c.relation_density = cfg.get_doubles("relation_density", default_density);
    c.mixing = cfg.get_double("lambda", c.mixing);
    c.seed = static_cast<std::uint64_t>(cfg.get_int("seed", static_cast<std::int64_t>(c.seed)));
    c.extent.lat_min = cfg.get_double("lat_min", c.extent.lat_min);
    c.extent.lat_max = cfg.get_double("lat_max", c.extent.lat_max);
    c.extent.lon_min = cfg.get_double("lon_min", c.extent.lon_min);
    c.extent.lon_max = cfg.get_double("lon_max", c.extent.lon_max);
    c.short_gap_prob = cfg.get_double("short_gap_prob", c.short_gap_prob);
    c.nearby_prob = cfg.get_double("nearby_prob", c.nearby_prob);
    c.pois_per_area = count("pois_per_area", c.pois_per_area);
    c.area_radius_m = cfg.get_double("area_radius_m", c.area_radius_m);
    c.preference_concentration = cfg.get_double("preference_concentration", c.preference_concentration);
    c.anchor_visits = cfg.get_bool("anchor_visits", c.anchor_visits);
    c.anchor_prob = cfg.get_double("anchor_prob", c.anchor_prob);
    c.anchor_jitter_m = cfg.get_double("anchor_jitter_m", c.anchor_jitter_m);
    c.timeline.bucket_length = cfg.get_int("bucket_length_seconds", c.timeline.bucket_length);
    c.timeline.num_buckets = count("num_buckets", c.timeline.num_buckets);
    return c;
}

SynthResult generate(const SynthConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    const std::size_t U = cfg.num_users;
    const std::size_t V = cfg.num_pois;
    const std::size_t P = cfg.num_relation_types;

    SynthResult out;
    auto& ds = out.dataset;
    auto& truth = out.truth;
    ds.num_users = U;
    ds.num_relation_types = P;
    ds.timeline = cfg.timeline;

    // Venue layout: neighborhoods of nearby POIs spread over the extent.
    const std::size_t areas = (V + cfg.pois_per_area - 1) / cfg.pois_per_area;
    std::vector<geo::LatLon> centers(areas);
    for (auto& c : centers) c = random_point(rng, cfg.extent);
    std::vector<std::size_t> order(V);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::size_t> area_of(V);
    std::vector<std::vector<data::PoiId>> area_members(areas);
    for (std::size_t i = 0; i < V; ++i) {
        area_of[order[i]] = i % areas;
        area_members[i % areas].push_back(order[i]);
    }
    for (auto& m : area_members) std::sort(m.begin(), m.end());
    ds.pois.resize(V);
    for (data::PoiId l = 0; l < V; ++l) {
        const auto p = random_in_disk(rng, centers[area_of[l]], cfg.area_radius_m);
        ds.pois[l] = data::Poi{l, p.lon, p.lat};
    }

    // Category blocks: relation type p governs venues [p V / P, (p+1) V / P).
    std::vector<std::size_t> block_of(V);
    truth.block_pois.assign(P, {});
    for (std::size_t p = 0; p < P; ++p) {
        for (std::size_t l = p * V / P; l < (p + 1) * V / P; ++l) {
            block_of[l] = p;
            truth.block_pois[p].push_back(l);
        }
    }

    // Relations: users partitioned into groups per type; members are pairwise related.
    truth.group_of.assign(P, std::vector<std::size_t>(U, 0));
    std::vector<std::vector<std::vector<data::UserId>>> groups(P);
    for (std::size_t p = 0; p < P; ++p) {
        const auto size = std::max<std::size_t>(2, static_cast<std::size_t>(std::lround(cfg.relation_density[p] * U)));
        std::vector<data::UserId> perm(U);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        for (std::size_t i = 0; i < U; i += size) {
            std::vector<data::UserId> g(perm.begin() + static_cast<std::ptrdiff_t>(i),
                                        perm.begin() + static_cast<std::ptrdiff_t>(std::min(U, i + size)));
            std::sort(g.begin(), g.end());
            for (auto u : g) truth.group_of[p][u] = groups[p].size();
            groups[p].push_back(std::move(g));
        }
        for (const auto& g : groups[p])
            for (std::size_t x = 0; x < g.size(); ++x)
                for (std::size_t y = x + 1; y < g.size(); ++y) ds.relations.push_back({g[x], g[y], p});
    }
    ds.relations = data::canonicalize(std::move(ds.relations));

    // Preferences: lambda-mixture of private taste and group mates' taste, per block.
    std::vector<std::vector<std::vector<double>>> priv(P, std::vector<std::vector<double>>(U));
    for (std::size_t p = 0; p < P; ++p)
        for (std::size_t u = 0; u < U; ++u)
            priv[p][u] = dirichlet(rng, truth.block_pois[p].size(), cfg.preference_concentration);
    truth.choice.assign(P, std::vector<std::vector<double>>(U));
    for (std::size_t p = 0; p < P; ++p) {
        for (std::size_t u = 0; u < U; ++u) {
            const auto& g = groups[p][truth.group_of[p][u]];
            const std::size_t n = truth.block_pois[p].size();
            std::vector<double> social(n, 0.0);
            std::size_t mates = 0;
            for (auto v : g) {
                if (v == u) continue;
                ++mates;
                for (std::size_t i = 0; i < n; ++i) social[i] += priv[p][v][i];
            }
            auto& q = truth.choice[p][u];
            q = priv[p][u];
            if (mates > 0) {
                for (std::size_t i = 0; i < n; ++i)
                    q[i] = (1.0 - cfg.mixing) * priv[p][u][i] + cfg.mixing * social[i] / static_cast<double>(mates);
            }
        }
    }

    // Anchors: one home per type-0 group, one office per type-1 group.
    truth.home.assign(U, {});
    truth.work.assign(U, {});
    std::vector<geo::LatLon> homes(groups[0].size());
    for (auto& h : homes) h = random_point(rng, cfg.extent);
    std::vector<geo::LatLon> offices(P > 1 ? groups[1].size() : U);
    for (auto& o : offices) o = random_point(rng, cfg.extent);
    std::vector<data::PoiId> home_poi(U), office_poi(U);
    for (std::size_t u = 0; u < U; ++u) {
        truth.home[u] = homes[truth.group_of[0][u]];
        truth.work[u] = offices[P > 1 ? truth.group_of[1][u] : u];
    }
    if (cfg.anchor_visits) {
        std::vector<data::PoiId> home_ids(homes.size()), office_ids(offices.size());
        for (std::size_t h = 0; h < homes.size(); ++h) {
            home_ids[h] = ds.pois.size();
            auto c = cfg.anchor_jitter_m > 0 ? random_in_disk(rng, homes[h], cfg.anchor_jitter_m) : homes[h];
            ds.pois.push_back({home_ids[h], c.lon, c.lat});
        }
        for (std::size_t o = 0; o < offices.size(); ++o) {
            office_ids[o] = ds.pois.size();
            auto c = cfg.anchor_jitter_m > 0 ? random_in_disk(rng, offices[o], cfg.anchor_jitter_m) : offices[o];
            ds.pois.push_back({office_ids[o], c.lon, c.lat});
        }
        for (std::size_t u = 0; u < U; ++u) {
            home_poi[u] = home_ids[truth.group_of[0][u]];
            office_poi[u] = office_ids[P > 1 ? truth.group_of[1][u] : u];
        }
    }

    // Trajectories.
    std::vector<std::vector<double>> overall(U, std::vector<double>(V, 0.0));
    for (std::size_t u = 0; u < U; ++u)
        for (std::size_t p = 0; p < P; ++p)
            for (std::size_t i = 0; i < truth.block_pois[p].size(); ++i)
                overall[u][truth.block_pois[p][i]] = truth.choice[p][u][i] / static_cast<double>(P);

    std::vector<char> is_venue_event;
    for (std::size_t u = 0; u < U; ++u) {
        auto t = static_cast<std::int64_t>(uniform(rng, 0.0, static_cast<double>(kDay)));
        bool short_gap = false;
        std::optional<data::PoiId> prev_venue;
        for (std::size_t k = 0; k < cfg.events_per_user; ++k) {
            if (k > 0) {
                short_gap = uniform(rng, 0.0, 1.0) < cfg.short_gap_prob;
                t += short_gap ? static_cast<std::int64_t>(uniform(rng, 5 * 60, 50 * 60))
                               : static_cast<std::int64_t>(uniform(rng, 2 * 3600, 24 * 3600));
            }
            data::PoiId poi = 0;
            bool venue = true;
            const double coin = uniform(rng, 0.0, 1.0);
            if (cfg.anchor_visits && is_weekday(t) && in_night(t) && coin < cfg.anchor_prob) {
                poi = home_poi[u];
                venue = false;
            } else if (cfg.anchor_visits && is_weekday(t) && in_work_hours(t) && coin < cfg.anchor_prob) {
                poi = office_poi[u];
                venue = false;
            } else if (prev_venue && short_gap && uniform(rng, 0.0, 1.0) < cfg.nearby_prob) {
                const auto& members = area_members[area_of[*prev_venue]];
                std::vector<double> w(members.size());
                for (std::size_t i = 0; i < members.size(); ++i) w[i] = overall[u][members[i]] + 1e-6;
                poi = members[sample_index(rng, w)];
            } else {
                const std::size_t p = pick(rng, P);
                poi = truth.block_pois[p][sample_index(rng, truth.choice[p][u])];
            }
            prev_venue = venue ? std::optional<data::PoiId>(poi) : prev_venue;
            ds.events.push_back({u, poi, t, 0});
            is_venue_event.push_back(venue ? 1 : 0);
        }
    }

    // Every POI needs at least one visit so ids stay dense on reload.
    const std::size_t L = ds.pois.size();
    if (ds.events.size() < L) throw ValidationError("synth: fewer events than POIs");
    std::vector<std::size_t> visits(L, 0);
    for (const auto& e : ds.events) ++visits[e.poi];
    for (data::PoiId l = 0; l < L; ++l) {
        while (visits[l] == 0) {
            const std::size_t i = pick(rng, ds.events.size());
            auto& e = ds.events[i];
            const bool anchor_poi = l >= V;
            if (visits[e.poi] < 2 || (!anchor_poi && !is_venue_event[i])) continue;
            --visits[e.poi];
            e.poi = l;
            ++visits[l];
        }
    }

    for (auto& e : ds.events) e.bucket = ds.timeline.bucket_of(e.time);
    data::sort_events(ds.events);
    return out;
}

}  // namespace memo::synth
