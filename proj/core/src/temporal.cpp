#include "memo/temporal.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "memo/error.hpp"

namespace memo::temporal {

namespace {

ad::Tensor activate(const ad::Tensor& x, Activation act) {
    return act == Activation::Tanh ? ad::tanh(x) : ad::sigmoid(x);
}

ad::Tensor recurrent(const std::vector<ad::Tensor>& w, const ad::Tensor& self, const ad::Tensor& other,
                     const ad::Tensor& z_t, const ad::Tensor& z_d, Activation act) {
    const ad::Tensor terms[] = {ad::matvec(w[0], self), ad::matvec(w[1], other), ad::matvec(w[2], z_t),
                                ad::matvec(w[3], z_d)};
    return activate(ad::add_n(terms), act);
}

struct EventInputs {
    ad::Tensor h_u, h_l, z_t, z_d;
};

EventInputs gather_inputs(const data::CheckinEvent& e, std::span<const data::Poi> pois,
                          const TemporalParams& params, const DynamicState& state, const ReplayOptions& options) {
    EventInputs in{state.user(e.user), state.poi(e.poi), {}, {}};
    if (options.use_intervals) {
        const Intervals iv = intervals_for(state, e, pois);
        in.z_t = interval_embedding(iv.dt, params.time_short, params.time_long, params.theta_t);
        in.z_d = interval_embedding(iv.dd, params.dist_short, params.dist_long, params.theta_d);
    } else {
        in.z_t = ad::Tensor::zeros({params.dim()});
        in.z_d = in.z_t;
    }
    return in;
}

void check_event(const data::CheckinEvent& e, const DynamicState& state, std::span<const data::Poi> pois) {
    if (e.user >= state.num_users() || e.poi >= state.num_pois() || e.poi >= pois.size()) {
        throw RangeError("replay: event (user " + std::to_string(e.user) + ", poi " + std::to_string(e.poi) +
                         ") outside the state");
    }
}

}  // namespace

TemporalParams TemporalParams::init(std::size_t dim, double theta_t, double theta_d, Rng& rng, RecurrentInit mode,
                                    double gain) {
    TemporalParams p;
    for (int k = 0; k < 4; ++k) p.user.push_back(glorot(rng, dim, dim));
    for (int k = 0; k < 4; ++k) p.poi.push_back(glorot(rng, dim, dim));
    if (mode == RecurrentInit::Identity) {
        if (!(gain > 0.0) || !std::isfinite(gain)) throw ContractError("TemporalParams::init: gain must be positive");
        for (int k = 0; k < 4; ++k)
            for (auto* w : {&p.user[k], &p.poi[k]}) {
                auto v = w->mutable_values();
                std::fill(v.begin(), v.end(), 0.0);
            }
        const std::size_t keep = (dim + 1) / 2;
        auto u_self = p.user[0].mutable_values();
        auto u_poi = p.user[1].mutable_values();
        auto l_self = p.poi[0].mutable_values();
        for (std::size_t i = 0; i < dim; ++i) {
            (i < keep ? u_self : u_poi)[i * dim + i] = gain;
            l_self[i * dim + i] = gain;
        }
    }
    p.time_short = glorot_vector(rng, dim, dim, 1);
    p.time_long = glorot_vector(rng, dim, dim, 1);
    p.dist_short = glorot_vector(rng, dim, dim, 1);
    p.dist_long = glorot_vector(rng, dim, dim, 1);
    p.theta_t = theta_t;
    p.theta_d = theta_d;
    p.validate();
    return p;
}

std::size_t TemporalParams::dim() const { return time_short.size(); }

void TemporalParams::validate() const {
    if (!(theta_t > 0.0) || !(theta_d > 0.0)) throw ContractError("temporal thresholds must be positive");
    if (user.size() != 4 || poi.size() != 4) throw DimensionError("temporal: expected four user and four POI matrices");
    const std::size_t d = dim();
    for (const auto* group : {&user, &poi})
        for (const auto& w : *group)
            if (w.rank() != 2 || w.rows() != d || w.cols() != d)
                throw DimensionError("temporal: matrix " + ad::shape_string(w.shape()) + " is not " +
                                     std::to_string(d) + "x" + std::to_string(d));
    for (const auto* v : {&time_long, &dist_short, &dist_long})
        if (v->size() != d) throw DimensionError("temporal: interval vectors must have d entries");
}

void TemporalParams::collect(ParamList& out) const {
    for (std::size_t k = 0; k < user.size(); ++k) out.push_back({"temporal.user.w" + std::to_string(k + 1), user[k]});
    for (std::size_t k = 0; k < poi.size(); ++k) out.push_back({"temporal.poi.w" + std::to_string(k + 1), poi[k]});
    out.push_back({"temporal.time_short", time_short});
    out.push_back({"temporal.time_long", time_long});
    out.push_back({"temporal.dist_short", dist_short});
    out.push_back({"temporal.dist_long", dist_long});
}

ad::Tensor interval_embedding(double delta, const ad::Tensor& short_vec, const ad::Tensor& long_vec, double theta) {
    if (!(delta >= 0.0)) throw ContractError("interval_embedding: negative interval " + std::to_string(delta));
    if (!(theta > 0.0)) throw ContractError("interval_embedding: threshold must be positive");
    const ad::Tensor& v = delta < theta ? short_vec : long_vec;
    return ad::add(ad::mul(v, v), ad::tanh(v));
}

ad::Tensor update_user(const ad::Tensor& h_u, const ad::Tensor& h_l, const ad::Tensor& z_t, const ad::Tensor& z_d,
                       const TemporalParams& params, Activation act) {
    return recurrent(params.user, h_u, h_l, z_t, z_d, act);
}

ad::Tensor update_poi(const ad::Tensor& h_l, std::span<const Visitor> visitors, const TemporalParams& params,
                      Activation act, std::size_t* steps) {
    ad::Tensor h = h_l;
    for (const auto& v : visitors) {
        h = recurrent(params.poi, h, v.h_u, v.z_t, v.z_d, act);
        if (steps) ++*steps;
    }
    return h;
}

TBatchPlan plan_tbatches(std::span<const data::CheckinEvent> events) {
    TBatchPlan plan;
    plan.batch_of.resize(events.size());
    std::vector<std::size_t> user_next, poi_next;  // 1 + last batch index, 0 if unseen
    for (std::size_t i = 0; i < events.size(); ++i) {
        const auto& e = events[i];
        if (i > 0 && data::event_before(e, events[i - 1]))
            throw ContractError("plan_tbatches: events are not time-sorted at index " + std::to_string(i));
        if (e.user >= user_next.size()) user_next.resize(e.user + 1, 0);
        if (e.poi >= poi_next.size()) poi_next.resize(e.poi + 1, 0);
        const std::size_t b = std::max(user_next[e.user], poi_next[e.poi]);
        if (b == plan.batches.size()) plan.batches.emplace_back();
        plan.batches[b].push_back(i);
        plan.batch_of[i] = b;
        user_next[e.user] = poi_next[e.poi] = b + 1;
    }
    return plan;
}

void validate_plan(const TBatchPlan& plan, std::span<const data::CheckinEvent> events) {
    std::vector<int> seen(events.size(), 0);
    for (std::size_t b = 0; b < plan.batches.size(); ++b) {
        std::vector<data::UserId> users;
        std::vector<data::PoiId> pois;
        for (auto i : plan.batches[b]) {
            if (i >= events.size()) throw ContractError("plan: event index out of range in batch " + std::to_string(b));
            if (seen[i]++) throw ContractError("plan: event " + std::to_string(i) + " assigned twice");
            users.push_back(events[i].user);
            pois.push_back(events[i].poi);
        }
        std::sort(users.begin(), users.end());
        std::sort(pois.begin(), pois.end());
        if (std::adjacent_find(users.begin(), users.end()) != users.end() ||
            std::adjacent_find(pois.begin(), pois.end()) != pois.end()) {
            throw ContractError("plan: batch " + std::to_string(b) + " shares a user or POI");
        }
    }
    for (std::size_t i = 0; i < events.size(); ++i)
        if (!seen[i]) throw ContractError("plan: event " + std::to_string(i) + " not covered");

    std::vector<std::size_t> batch(events.size());
    for (std::size_t b = 0; b < plan.batches.size(); ++b)
        for (auto i : plan.batches[b]) batch[i] = b;
    std::vector<std::optional<std::size_t>> user_last, poi_last;
    for (std::size_t i = 0; i < events.size(); ++i) {
        const auto& e = events[i];
        if (e.user >= user_last.size()) user_last.resize(e.user + 1);
        if (e.poi >= poi_last.size()) poi_last.resize(e.poi + 1);
        if ((user_last[e.user] && *user_last[e.user] >= batch[i]) ||
            (poi_last[e.poi] && *poi_last[e.poi] >= batch[i])) {
            throw ContractError("plan: event " + std::to_string(i) + " breaks per-entity batch order");
        }
        user_last[e.user] = poi_last[e.poi] = batch[i];
    }
}

DynamicState::DynamicState(ad::Tensor base, std::size_t num_users, std::size_t num_pois)
    : base_(std::move(base)), users_(num_users), pois_(num_pois), last_(num_users) {
    if (base_.rank() != 2 || base_.rows() != num_users + num_pois) {
        throw DimensionError("DynamicState: base has shape " + ad::shape_string(base_.shape()) + ", expected " +
                             std::to_string(num_users + num_pois) + " rows");
    }
}

ad::Tensor DynamicState::user(data::UserId u) const {
    const auto& h = users_.at(u);
    return h.defined() ? h : ad::row(base_, u);
}

ad::Tensor DynamicState::poi(data::PoiId l) const {
    const auto& h = pois_.at(l);
    return h.defined() ? h : ad::row(base_, users_.size() + l);
}

void DynamicState::set_user(data::UserId u, ad::Tensor h) { users_.at(u) = std::move(h); }
void DynamicState::set_poi(data::PoiId l, ad::Tensor h) { pois_.at(l) = std::move(h); }

void DynamicState::rebase(ad::Tensor base) {
    if (base.rank() != 2 || base.rows() != base_.rows() || base.cols() != base_.cols())
        throw DimensionError("DynamicState::rebase: shape mismatch");
    base_ = std::move(base);
}

void DynamicState::detach() {
    for (auto& h : users_)
        if (h.defined()) h = h.detach();
    for (auto& h : pois_)
        if (h.defined()) h = h.detach();
}

Intervals intervals_for(const DynamicState& state, const data::CheckinEvent& event, std::span<const data::Poi> pois) {
    const auto& last = state.last_visit(event.user);
    if (!last) return {};
    const double dt = static_cast<double>(event.time - last->time);
    if (dt < 0.0) throw ContractError("intervals_for: event precedes the user's previous visit");
    return {dt, geo::haversine_m(last->where, pois[event.poi].coords())};
}

void replay(const TBatchPlan& plan, std::span<const data::CheckinEvent> events, std::span<const data::Poi> pois,
            const TemporalParams& params, DynamicState& state, const ReplayOptions& options, const EventHook& hook) {
    if (plan.batch_of.size() != events.size()) throw ContractError("replay: plan does not match the event list");
    struct Pending {
        std::size_t event;
        ad::Tensor h_u, h_l;
    };
    std::vector<Pending> pending;
    for (const auto& batch : plan.batches) {
        pending.clear();
        for (auto i : batch) {
            const auto& e = events[i];
            check_event(e, state, pois);
            EventInputs in = gather_inputs(e, pois, params, state, options);
            if (hook) hook(i, in.h_u, in.h_l);
            const Visitor visitor{in.h_u, in.z_t, in.z_d};
            pending.push_back({i, update_user(in.h_u, in.h_l, in.z_t, in.z_d, params, options.activation),
                               update_poi(in.h_l, {&visitor, 1}, params, options.activation)});
        }
        for (auto& p : pending) {
            const auto& e = events[p.event];
            state.set_user(e.user, std::move(p.h_u));
            state.set_poi(e.poi, std::move(p.h_l));
            state.set_last_visit(e.user, {e.time, pois[e.poi].coords()});
        }
    }
}

void replay_sequential(std::span<const data::CheckinEvent> events, std::span<const data::Poi> pois,
                       const TemporalParams& params, DynamicState& state, const ReplayOptions& options,
                       const EventHook& hook) {
    for (std::size_t i = 0; i < events.size(); ++i) {
        const auto& e = events[i];
        check_event(e, state, pois);
        EventInputs in = gather_inputs(e, pois, params, state, options);
        if (hook) hook(i, in.h_u, in.h_l);
        const Visitor visitor{in.h_u, in.z_t, in.z_d};
        ad::Tensor next_u = update_user(in.h_u, in.h_l, in.z_t, in.z_d, params, options.activation);
        ad::Tensor next_l = update_poi(in.h_l, {&visitor, 1}, params, options.activation);
        state.set_user(e.user, std::move(next_u));
        state.set_poi(e.poi, std::move(next_l));
        state.set_last_visit(e.user, {e.time, pois[e.poi].coords()});
    }
}

}  // namespace memo::temporal
