#pragma once

// Prediction head, loss, Adam, ranking metrics, the Markov baseline and the
// end-to-end training loop with its ablation variants.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "memo/config.hpp"
#include "memo/data.hpp"
#include "memo/encoder.hpp"
#include "memo/params.hpp"
#include "memo/temporal.hpp"
#include "memo/tensor.hpp"

namespace memo::train {

enum class Ablation { Full, NG, NA, NR, NTS };

std::string ablation_name(Ablation a);
Ablation parse_ablation(const std::string& name);

struct TrainConfig {
    std::size_t epochs = 50;
    double lr = 0.001;
    std::size_t dim = 128;
    double theta_t = 3600.0;
    double theta_d = 200.0;
    data::Timeline timeline;
    std::uint64_t seed = 1;
    Ablation ablation = Ablation::Full;
    std::size_t k = 10;

    std::size_t gcn_layers = 1;
    temporal::Activation activation = temporal::Activation::Tanh;
    bool poi_state_scoring = false;  // add h_l . h_u to the head logits
    data::SplitMode split_mode = data::SplitMode::Global;
    std::size_t window_buckets = 1;  // timestamp buckets per optimization window
    std::size_t window_events = 0;   // cap on events per window, 0 = no cap
    temporal::RecurrentInit recurrent_init = temporal::RecurrentInit::Identity;
    double recurrent_gain = 2.0;
    std::size_t bptt_windows = 1;    // windows sharing one recorded history

    void validate() const;
    static TrainConfig from_config(const KeyValueConfig& cfg);
    KeyValueConfig to_config() const;
};

struct ModelShape {
    std::size_t num_users = 0;
    std::size_t num_pois = 0;
    std::size_t num_social = 0;
    std::size_t dim = 0;
    std::size_t gcn_layers = 1;
};

// logits = weight * h_u + bias, weight stored as [L x d].
struct PredictionHead {
    ad::Tensor weight;
    ad::Tensor bias;

    static PredictionHead init(std::size_t num_pois, std::size_t dim, Rng& rng);
    void collect(ParamList& out) const;
};

struct Model {
    ModelShape shape;
    Ablation ablation = Ablation::Full;
    temporal::Activation activation = temporal::Activation::Tanh;
    bool poi_state_scoring = false;
    encoder::EncoderParams encoder;
    temporal::TemporalParams temporal;
    PredictionHead head;

    static Model init(const ModelShape& shape, const TrainConfig& cfg, Rng& rng);
    ParamList parameters() const;

    // Fused static representation of every node, or the raw embeddings when
    // relation modeling is ablated.
    ad::Tensor static_representation(const encoder::EncoderGraph& graph) const;
    temporal::ReplayOptions replay_options() const;
    bool uses_replay() const noexcept { return ablation != Ablation::NR; }
};

ad::Tensor predict_scores(const ad::Tensor& h_u, const PredictionHead& head);
// Adds the dot product with every POI state ([L x d]).
ad::Tensor predict_scores(const ad::Tensor& h_u, const PredictionHead& head, const ad::Tensor& poi_states);

// Scores for one user under the model's scoring rule.
ad::Tensor model_scores(const Model& model, const temporal::DynamicState& state, data::UserId user);

struct Ranked {
    data::PoiId poi;
    double score;
};

// Descending score, ties by lower POI id; k is clamped to the list length.
std::vector<Ranked> top_k(std::span<const double> scores, std::size_t k);
// 1-based rank of `truth` under the same ordering.
std::size_t rank_of(std::span<const double> scores, data::PoiId truth);

struct Metrics {
    double recall = 0.0;
    double mrr = 0.0;
    std::size_t count = 0;
};

Metrics metrics_from_ranks(std::span<const std::size_t> ranks, std::size_t k);
Metrics evaluate(std::span<const std::vector<data::PoiId>> ranked, std::span<const data::PoiId> truths,
                 std::size_t k);

// First-order transition counts over consecutive visits of each user, with
// a popularity fallback for unseen current POIs.
class MarkovBaseline {
public:
    MarkovBaseline(std::span<const data::CheckinEvent> history, std::size_t num_pois);

    std::size_t transitions(data::PoiId from, data::PoiId to) const;
    std::size_t popularity(data::PoiId l) const { return popularity_.at(l); }
    // Count-based scores; popularity when `current` is unknown or has no
    // outgoing transitions.
    std::vector<double> scores(std::optional<data::PoiId> current) const;

private:
    std::size_t num_pois_;
    std::vector<std::vector<std::size_t>> counts_;
    std::vector<std::size_t> popularity_;
};

// Ranks each test event from the user's most recent POI in history + earlier
// test events.
Metrics markov_baseline(std::span<const data::CheckinEvent> history, std::span<const data::CheckinEvent> test,
                        std::size_t num_pois, std::size_t k);

struct AdamOptions {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::size_t step = 0;
};

// One bias-corrected Adam update of every tensor in `params` from its
// current gradient.
void adam_step(const ParamList& params, AdamState& state, const AdamOptions& options);

// Detached inputs of each entity's most recent update. A later window
// re-evaluates that transition under the current parameters, so every
// prediction back-propagates through at least one recurrent step.
class TransitionMemory {
public:
    TransitionMemory(std::size_t num_users, std::size_t num_pois);

    void record(const data::CheckinEvent& event, const ad::Tensor& h_u, const ad::Tensor& h_l,
                temporal::Intervals intervals);
    // Recomputes the state of every recorded entity touched by `events`.
    void reanchor(const Model& model, std::span<const data::CheckinEvent> events,
                  temporal::DynamicState& state) const;
    bool has_user(data::UserId u) const { return users_.at(u).has_value(); }
    bool has_poi(data::PoiId l) const { return pois_.at(l).has_value(); }

private:
    struct Step {
        std::vector<double> self;
        std::vector<double> other;
        temporal::Intervals intervals;
    };
    std::vector<std::optional<Step>> users_;
    std::vector<std::optional<Step>> pois_;
};

// Mean cross-entropy of the events in `events`, predicting each one from the
// pre-event state and then applying its updates. `state` must be based on
// the current static representation.
ad::Tensor window_loss(const Model& model, std::span<const data::CheckinEvent> events,
                       std::span<const data::Poi> pois, temporal::DynamicState& state,
                       TransitionMemory* memory = nullptr);

// Applies the events' updates without scoring.
void advance(const Model& model, std::span<const data::CheckinEvent> events, std::span<const data::Poi> pois,
             temporal::DynamicState& state);

// Rank of each event's POI from its pre-event state; the state advances
// through the events.
std::vector<std::size_t> rank_events(const Model& model, std::span<const data::CheckinEvent> events,
                                     std::span<const data::Poi> pois, temporal::DynamicState& state);

struct EpochLog {
    std::size_t epoch = 0;
    double train_loss = 0.0;  // mean over windows; 0 for epoch 0
    double eval_loss = 0.0;   // training-split cross-entropy under the end-of-epoch parameters
    Metrics validation;
};

struct TrainResult {
    Model model;
    std::vector<EpochLog> epochs;
    std::size_t best_epoch = 0;
    Metrics validation;
    Metrics test;
    std::uint64_t seed = 0;
    Ablation ablation = Ablation::Full;
    std::size_t k = 10;
};

using EpochCallback = std::function<void(const EpochLog&)>;

TrainResult train(const data::Dataset& dataset, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

// Test metrics with the graph built from the training split and states
// warmed by replaying train and validation events.
Metrics evaluate_split(const Model& model, const data::Dataset& dataset, const data::Split& split, std::size_t k);

// Dynamic state after replaying every event of the dataset.
temporal::DynamicState final_state(const Model& model, const data::Dataset& dataset,
                                   std::span<const data::CheckinEvent> graph_events);

struct MetricsReport {
    std::size_t k = 10;
    Ablation ablation = Ablation::Full;
    std::vector<std::uint64_t> seeds;
    std::vector<Metrics> per_seed;

    double mean_recall() const;
    double mean_mrr() const;
    double std_recall() const;  // population standard deviation
    double std_mrr() const;

    // `recall@K=`, `mrr@K=`, `seed=`, `ablation=` lines.
    std::string key_value_block() const;
    std::string table() const;
};

MetricsReport report_of(const TrainResult& result);
MetricsReport aggregate(std::span<const TrainResult> results);

void save_model(const std::filesystem::path& path, const Model& model, const KeyValueConfig& settings);

struct LoadedModel {
    Model model;
    KeyValueConfig settings;
};

LoadedModel load_model(const std::filesystem::path& path);

}  // namespace memo::train
