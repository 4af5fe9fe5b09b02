#pragma once

// Coupled user/POI recurrent updates over the visit stream.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "memo/data.hpp"
#include "memo/geo.hpp"
#include "memo/params.hpp"
#include "memo/tensor.hpp"

namespace memo::temporal {

enum class Activation { Tanh, Sigmoid };

enum class RecurrentInit { Glorot, Identity };

struct TemporalParams {
    // user[k] multiplies h_u, h_l, z_t, z_d for k = 0..3; poi[k] mirrors it
    // with h_l and h_u swapped.
    std::vector<ad::Tensor> user;
    std::vector<ad::Tensor> poi;
    ad::Tensor time_short, time_long;
    ad::Tensor dist_short, dist_long;
    double theta_t = 3600.0;
    double theta_d = 200.0;

    // Glorot: every matrix Glorot-uniform. Identity: W_1^L = gain * I; the
    // user keeps its own state in the first ceil(d/2) coordinates (W_1^U)
    // and takes the POI state in the rest (W_2^U); all other matrices are 0.
    static TemporalParams init(std::size_t dim, double theta_t, double theta_d, Rng& rng,
                               RecurrentInit mode = RecurrentInit::Glorot, double gain = 2.0);
    std::size_t dim() const;
    void validate() const;
    void collect(ParamList& out) const;
};

// v*v + tanh(v) with v = short_vec when delta < theta, else long_vec.
ad::Tensor interval_embedding(double delta, const ad::Tensor& short_vec, const ad::Tensor& long_vec,
                              double theta);

ad::Tensor update_user(const ad::Tensor& h_u, const ad::Tensor& h_l, const ad::Tensor& z_t,
                       const ad::Tensor& z_d, const TemporalParams& params,
                       Activation act = Activation::Tanh);

struct Visitor {
    ad::Tensor h_u;
    ad::Tensor z_t;
    ad::Tensor z_d;
};

// Folds the POI update once per visitor, in the given order. `steps`, when
// given, is incremented once per application.
ad::Tensor update_poi(const ad::Tensor& h_l, std::span<const Visitor> visitors, const TemporalParams& params,
                      Activation act = Activation::Tanh, std::size_t* steps = nullptr);

struct TBatchPlan {
    std::vector<std::vector<std::size_t>> batches;  // event indices, ascending
    std::vector<std::size_t> batch_of;              // per event
};

// Greedy plan: event e goes to 1 + max(last batch of its user, last batch of
// its POI), or 0 when both are new.
TBatchPlan plan_tbatches(std::span<const data::CheckinEvent> events);

// Throws ContractError naming the first violated invariant.
void validate_plan(const TBatchPlan& plan, std::span<const data::CheckinEvent> events);

struct LastVisit {
    std::int64_t time = 0;
    geo::LatLon where;
};

// Per-entity recurrent state. Entities that have not been updated read their
// row of `base`, the fused static representation.
class DynamicState {
public:
    DynamicState() = default;
    DynamicState(ad::Tensor base, std::size_t num_users, std::size_t num_pois);

    std::size_t num_users() const noexcept { return users_.size(); }
    std::size_t num_pois() const noexcept { return pois_.size(); }

    ad::Tensor user(data::UserId u) const;
    ad::Tensor poi(data::PoiId l) const;
    void set_user(data::UserId u, ad::Tensor h);
    void set_poi(data::PoiId l, ad::Tensor h);
    bool user_touched(data::UserId u) const { return users_.at(u).defined(); }
    bool poi_touched(data::PoiId l) const { return pois_.at(l).defined(); }

    const std::optional<LastVisit>& last_visit(data::UserId u) const { return last_.at(u); }
    void set_last_visit(data::UserId u, LastVisit v) { last_.at(u) = v; }

    // Replaces the fallback representation used by untouched entities.
    void rebase(ad::Tensor base);
    // Cuts every stored state from its recorded history.
    void detach();

    const ad::Tensor& base() const noexcept { return base_; }

private:
    ad::Tensor base_;
    std::vector<ad::Tensor> users_;
    std::vector<ad::Tensor> pois_;
    std::vector<std::optional<LastVisit>> last_;
};

struct Intervals {
    double dt = 0.0;
    double dd = 0.0;
};

// Elapsed seconds and Haversine meters since the user's previous visit; zero
// on a first visit.
Intervals intervals_for(const DynamicState& state, const data::CheckinEvent& event,
                        std::span<const data::Poi> pois);

struct ReplayOptions {
    bool use_intervals = true;  // false: interval embeddings are zero vectors
    Activation activation = Activation::Tanh;
};

// Called before an event's updates with its index and the user's and POI's
// pre-event states.
using EventHook = std::function<void(std::size_t event, const ad::Tensor& h_u, const ad::Tensor& h_l)>;

void replay(const TBatchPlan& plan, std::span<const data::CheckinEvent> events, std::span<const data::Poi> pois,
            const TemporalParams& params, DynamicState& state, const ReplayOptions& options,
            const EventHook& hook = {});

// One event at a time in stream order.
void replay_sequential(std::span<const data::CheckinEvent> events, std::span<const data::Poi> pois,
                       const TemporalParams& params, DynamicState& state, const ReplayOptions& options,
                       const EventHook& hook = {});

}  // namespace memo::temporal
