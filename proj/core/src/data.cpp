#include "memo/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <string>
#include <string_view>

#include "memo/error.hpp"

namespace memo::data {

namespace {

constexpr std::string_view kCheckinHeader = "user_id,poi_id,timestamp,lat,lon";
constexpr std::string_view kRelationHeader = "user_a,user_b,relation_type";

std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

std::string_view strip(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

template <typename T>
T field(std::string_view text, const std::string& file, std::size_t line, const char* name) {
    text = strip(text);
    T out{};
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
    if (ec != std::errc{} || ptr != text.data() + text.size() || text.empty()) {
        throw ParseError(file, line, std::string("bad ") + name + " '" + std::string(text) + "'");
    }
    return out;
}

std::ifstream open_csv(const std::filesystem::path& path, std::string_view header) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::string first;
    if (!std::getline(in, first) || strip(first) != header) {
        throw ParseError(path.string(), 1, "expected header '" + std::string(header) + "'");
    }
    return in;
}

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

}  // namespace

std::size_t Timeline::bucket_of(std::int64_t time) const {
    if (time < 0) throw RangeError("negative timestamp " + std::to_string(time));
    if (bucket_length <= 0 || num_buckets == 0) throw ContractError("timeline must have positive bucket length and count");
    const auto b = static_cast<std::size_t>(time / bucket_length);
    return std::min(b, num_buckets - 1);
}

bool event_before(const CheckinEvent& x, const CheckinEvent& y) noexcept {
    if (x.time != y.time) return x.time < y.time;
    if (x.user != y.user) return x.user < y.user;
    return x.poi < y.poi;
}

void sort_events(std::vector<CheckinEvent>& events) { std::stable_sort(events.begin(), events.end(), event_before); }

Dataset load_checkins(const std::filesystem::path& path, std::int64_t bucket_length, std::size_t num_buckets) {
    const std::string file = path.string();
    auto in = open_csv(path, kCheckinHeader);

    Dataset ds;
    ds.timeline = Timeline{bucket_length, num_buckets};
    std::vector<bool> seen_poi;
    std::vector<Poi> pois;

    std::string line;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (strip(line).empty()) continue;
        const auto cols = split_commas(line);
        if (cols.size() != 5) {
            throw ParseError(file, lineno, "expected 5 fields, got " + std::to_string(cols.size()));
        }
        const auto user = field<std::int64_t>(cols[0], file, lineno, "user_id");
        const auto poi = field<std::int64_t>(cols[1], file, lineno, "poi_id");
        const auto ts = field<std::int64_t>(cols[2], file, lineno, "timestamp");
        const auto lat = field<double>(cols[3], file, lineno, "lat");
        const auto lon = field<double>(cols[4], file, lineno, "lon");
        if (user < 0 || poi < 0) throw ParseError(file, lineno, "negative id");
        if (ts < 0) throw RangeError(file + ":" + std::to_string(lineno) + ": negative timestamp");
        if (!(lat >= -90.0 && lat <= 90.0) || !(lon >= -180.0 && lon <= 180.0)) {
            throw RangeError(file + ":" + std::to_string(lineno) + ": coordinate out of range");
        }

        const auto pid = static_cast<std::size_t>(poi);
        if (pid >= seen_poi.size()) {
            seen_poi.resize(pid + 1, false);
            pois.resize(pid + 1);
        }
        if (!seen_poi[pid]) {
            seen_poi[pid] = true;
            pois[pid] = Poi{pid, lon, lat};
        }
        CheckinEvent ev{static_cast<std::size_t>(user), pid, ts, ds.timeline.bucket_of(ts)};
        ds.num_users = std::max(ds.num_users, ev.user + 1);
        ds.events.push_back(ev);
    }
    for (std::size_t i = 0; i < seen_poi.size(); ++i) {
        if (!seen_poi[i]) throw ValidationError(file + ": poi ids are not dense; id " + std::to_string(i) + " missing");
    }
    ds.pois = std::move(pois);
    sort_events(ds.events);
    return ds;
}

void write_checkins(const Dataset& dataset, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << kCheckinHeader << '\n';
    for (const auto& e : dataset.events) {
        const Poi& p = dataset.pois.at(e.poi);
        out << e.user << ',' << e.poi << ',' << e.time << ',' << format_double(p.latitude) << ','
            << format_double(p.longitude) << '\n';
    }
    if (!out) throw IoError("write failed for " + path.string());
}

std::vector<RelationTriple> canonicalize(std::vector<RelationTriple> relations) {
    for (auto& r : relations) {
        if (r.a == r.b) throw ValidationError("self-loop relation for user " + std::to_string(r.a));
        if (r.a > r.b) std::swap(r.a, r.b);
    }
    std::sort(relations.begin(), relations.end());
    relations.erase(std::unique(relations.begin(), relations.end()), relations.end());
    return relations;
}

std::vector<RelationTriple> load_relations(const std::filesystem::path& path, std::size_t num_types) {
    const std::string file = path.string();
    auto in = open_csv(path, kRelationHeader);
    std::vector<RelationTriple> out;
    std::string line;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (strip(line).empty()) continue;
        const auto cols = split_commas(line);
        if (cols.size() != 3) throw ParseError(file, lineno, "expected 3 fields, got " + std::to_string(cols.size()));
        const auto a = field<std::int64_t>(cols[0], file, lineno, "user_a");
        const auto b = field<std::int64_t>(cols[1], file, lineno, "user_b");
        const auto t = field<std::int64_t>(cols[2], file, lineno, "relation_type");
        if (a < 0 || b < 0) throw ParseError(file, lineno, "negative user id");
        if (t < 0 || static_cast<std::size_t>(t) >= num_types) {
            throw RangeError(file + ":" + std::to_string(lineno) + ": relation type " + std::to_string(t) +
                             " outside [0, " + std::to_string(num_types) + ")");
        }
        if (a == b) throw ValidationError(file + ":" + std::to_string(lineno) + ": self-loop relation");
        out.push_back({static_cast<std::size_t>(a), static_cast<std::size_t>(b), static_cast<std::size_t>(t)});
    }
    return canonicalize(std::move(out));
}

void write_relations(std::span<const RelationTriple> relations, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << kRelationHeader << '\n';
    for (const auto& r : relations) out << r.a << ',' << r.b << ',' << r.type << '\n';
    if (!out) throw IoError("write failed for " + path.string());
}

Dataset load_dataset(const std::filesystem::path& checkins, const std::filesystem::path& relations,
                     std::size_t num_types, const Timeline& timeline) {
    Dataset ds = load_checkins(checkins, timeline.bucket_length, timeline.num_buckets);
    ds.num_relation_types = num_types;
    ds.relations = load_relations(relations, num_types);
    for (const auto& r : ds.relations) {
        // Users who only appear in relations still count.
        ds.num_users = std::max(ds.num_users, r.b + 1);
    }
    return ds;
}

Split chronological_split(const Dataset& dataset, SplitFractions f, SplitMode mode) {
    if (dataset.events.empty()) throw ContractError("chronological_split: empty dataset");
    if (f.train < 0 || f.validation < 0 || f.test < 0 ||
        std::abs(f.train + f.validation + f.test - 1.0) > 1e-9) {
        throw ContractError("chronological_split: fractions must be non-negative and sum to 1");
    }
    auto cut = [&](std::size_t n) {
        // Small slack keeps exact decimal products (0.8 * 10) from rounding down.
        const auto b1 = static_cast<std::size_t>(std::floor(f.train * static_cast<double>(n) + 1e-9));
        const auto b2 = static_cast<std::size_t>(std::floor((f.train + f.validation) * static_cast<double>(n) + 1e-9));
        return std::pair{std::min(b1, n), std::min(b2, n)};
    };

    Split s;
    if (mode == SplitMode::Global) {
        const auto& ev = dataset.events;
        const auto [b1, b2] = cut(ev.size());
        s.train.assign(ev.begin(), ev.begin() + static_cast<std::ptrdiff_t>(b1));
        s.validation.assign(ev.begin() + static_cast<std::ptrdiff_t>(b1), ev.begin() + static_cast<std::ptrdiff_t>(b2));
        s.test.assign(ev.begin() + static_cast<std::ptrdiff_t>(b2), ev.end());
        return s;
    }

    std::vector<std::vector<CheckinEvent>> per_user(dataset.num_users);
    for (const auto& e : dataset.events) per_user.at(e.user).push_back(e);
    for (const auto& traj : per_user) {
        const auto [b1, b2] = cut(traj.size());
        for (std::size_t i = 0; i < traj.size(); ++i) {
            (i < b1 ? s.train : i < b2 ? s.validation : s.test).push_back(traj[i]);
        }
    }
    sort_events(s.train);
    sort_events(s.validation);
    sort_events(s.test);
    return s;
}

}  // namespace memo::data
