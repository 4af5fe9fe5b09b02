#include "memo/train.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>
#include <sstream>

#include "memo/error.hpp"

namespace memo::train {

namespace {

std::string fmt(const char* spec, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

std::size_t positive_size(const KeyValueConfig& cfg, const std::string& key, std::size_t fallback) {
    const std::int64_t v = cfg.get_int(key, static_cast<std::int64_t>(fallback));
    if (v < 0) throw ConfigError("config key '" + key + "' must be non-negative");
    return static_cast<std::size_t>(v);
}

std::vector<std::vector<double>> snapshot(const ParamList& params) {
    std::vector<std::vector<double>> out;
    out.reserve(params.size());
    for (const auto& p : params) out.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
    return out;
}

void restore(const ParamList& params, const std::vector<std::vector<double>>& values) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto dst = ad::Tensor(params[i].tensor).mutable_values();
        std::copy(values[i].begin(), values[i].end(), dst.begin());
    }
}

// Consecutive runs of events sharing bucket / window_buckets, at most
// max_events long when max_events > 0.
std::vector<std::span<const data::CheckinEvent>> windows_of(std::span<const data::CheckinEvent> events,
                                                            std::size_t window_buckets, std::size_t max_events) {
    std::vector<std::span<const data::CheckinEvent>> out;
    std::size_t start = 0;
    for (std::size_t i = 1; i <= events.size(); ++i) {
        if (i == events.size() || events[i].bucket / window_buckets != events[start].bucket / window_buckets ||
            (max_events > 0 && i - start == max_events)) {
            out.push_back(events.subspan(start, i - start));
            start = i;
        }
    }
    return out;
}

double mean_of(std::span<const double> xs) {
    return xs.empty() ? 0.0 : std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

double std_of(std::span<const double> xs) {
    if (xs.empty()) return 0.0;
    const double m = mean_of(xs);
    double s = 0.0;
    for (double x : xs) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(xs.size()));
}

}  // namespace

std::string ablation_name(Ablation a) {
    switch (a) {
        case Ablation::Full: return "full";
        case Ablation::NG: return "NG";
        case Ablation::NA: return "NA";
        case Ablation::NR: return "NR";
        case Ablation::NTS: return "NTS";
    }
    return "full";
}

Ablation parse_ablation(const std::string& name) {
    std::string s = name;
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (s == "full" || s == "memo") return Ablation::Full;
    if (s == "ng") return Ablation::NG;
    if (s == "na") return Ablation::NA;
    if (s == "nr") return Ablation::NR;
    if (s == "nts") return Ablation::NTS;
    throw ConfigError("unknown ablation '" + name + "' (expected full, NG, NA, NR or NTS)");
}

void TrainConfig::validate() const {
    if (epochs == 0) throw ConfigError("epochs must be positive");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be positive");
    if (dim == 0) throw ConfigError("d must be positive");
    if (!(theta_t > 0.0) || !(theta_d > 0.0)) throw ConfigError("thresholds must be positive");
    if (timeline.bucket_length <= 0 || timeline.num_buckets == 0) throw ConfigError("timeline must be positive");
    if (k == 0) throw ConfigError("k must be at least 1");
    if (gcn_layers == 0) throw ConfigError("gcn_layers must be positive");
    if (window_buckets == 0) throw ConfigError("window_buckets must be positive");
    if (bptt_windows == 0) throw ConfigError("bptt_windows must be positive");
    if (!(recurrent_gain > 0.0) || !std::isfinite(recurrent_gain)) throw ConfigError("recurrent_gain must be positive");
}

TrainConfig TrainConfig::from_config(const KeyValueConfig& c) {
    TrainConfig t;
    t.epochs = positive_size(c, "epochs", t.epochs);
    t.lr = c.get_double("lr", t.lr);
    t.dim = positive_size(c, "d", t.dim);
    t.theta_t = c.get_double("theta_t_seconds", t.theta_t);
    t.theta_d = c.get_double("theta_d_meters", t.theta_d);
    t.timeline.bucket_length = c.get_int("bucket_length_seconds", t.timeline.bucket_length);
    t.timeline.num_buckets = positive_size(c, "num_buckets", t.timeline.num_buckets);
    t.seed = static_cast<std::uint64_t>(c.get_int("seed", static_cast<std::int64_t>(t.seed)));
    t.ablation = parse_ablation(c.get_string("ablation", "full"));
    t.k = positive_size(c, "k", t.k);
    t.gcn_layers = positive_size(c, "gcn_layers", t.gcn_layers);
    const std::string act = c.get_string("activation", "tanh");
    if (act == "tanh") {
        t.activation = temporal::Activation::Tanh;
    } else if (act == "sigmoid") {
        t.activation = temporal::Activation::Sigmoid;
    } else {
        throw ConfigError("activation must be tanh or sigmoid, got '" + act + "'");
    }
    t.poi_state_scoring = c.get_bool("poi_state_scoring", t.poi_state_scoring);
    const std::string split = c.get_string("split_mode", "global");
    if (split == "global") {
        t.split_mode = data::SplitMode::Global;
    } else if (split == "per_user") {
        t.split_mode = data::SplitMode::PerUser;
    } else {
        throw ConfigError("split_mode must be global or per_user, got '" + split + "'");
    }
    t.window_buckets = positive_size(c, "window_buckets", t.window_buckets);
    t.window_events = positive_size(c, "window_events", t.window_events);
    const std::string init = c.get_string("recurrent_init", "identity");
    if (init == "identity") {
        t.recurrent_init = temporal::RecurrentInit::Identity;
    } else if (init == "glorot") {
        t.recurrent_init = temporal::RecurrentInit::Glorot;
    } else {
        throw ConfigError("recurrent_init must be identity or glorot, got '" + init + "'");
    }
    t.recurrent_gain = c.get_double("recurrent_gain", t.recurrent_gain);
    t.bptt_windows = positive_size(c, "bptt_windows", t.bptt_windows);
    t.validate();
    return t;
}

KeyValueConfig TrainConfig::to_config() const {
    KeyValueConfig c;
    c.set("epochs", std::to_string(epochs));
    c.set("lr", fmt("%.17g", lr));
    c.set("d", std::to_string(dim));
    c.set("theta_t_seconds", fmt("%.17g", theta_t));
    c.set("theta_d_meters", fmt("%.17g", theta_d));
    c.set("bucket_length_seconds", std::to_string(timeline.bucket_length));
    c.set("num_buckets", std::to_string(timeline.num_buckets));
    c.set("seed", std::to_string(seed));
    c.set("ablation", ablation_name(ablation));
    c.set("k", std::to_string(k));
    c.set("gcn_layers", std::to_string(gcn_layers));
    c.set("activation", activation == temporal::Activation::Tanh ? "tanh" : "sigmoid");
    c.set("poi_state_scoring", poi_state_scoring ? "true" : "false");
    c.set("split_mode", split_mode == data::SplitMode::Global ? "global" : "per_user");
    c.set("window_buckets", std::to_string(window_buckets));
    c.set("window_events", std::to_string(window_events));
    c.set("recurrent_init", recurrent_init == temporal::RecurrentInit::Identity ? "identity" : "glorot");
    c.set("recurrent_gain", fmt("%.17g", recurrent_gain));
    c.set("bptt_windows", std::to_string(bptt_windows));
    return c;
}

PredictionHead PredictionHead::init(std::size_t num_pois, std::size_t dim, Rng& rng) {
    return {glorot(rng, num_pois, dim), zeros_param({num_pois})};
}

void PredictionHead::collect(ParamList& out) const {
    out.push_back({"head.weight", weight});
    out.push_back({"head.bias", bias});
}

Model Model::init(const ModelShape& shape, const TrainConfig& cfg, Rng& rng) {
    if (shape.num_pois == 0) throw ValidationError("model needs at least one POI");
    Model m;
    m.shape = shape;
    m.ablation = cfg.ablation;
    m.activation = cfg.activation;
    m.poi_state_scoring = cfg.poi_state_scoring;
    m.encoder = encoder::EncoderParams::init(
        {shape.num_users + shape.num_pois, shape.num_social + 1, shape.dim, shape.gcn_layers}, rng);
    m.temporal = temporal::TemporalParams::init(shape.dim, cfg.theta_t, cfg.theta_d, rng, cfg.recurrent_init,
                                                 cfg.recurrent_gain);
    m.head = PredictionHead::init(shape.num_pois, shape.dim, rng);
    return m;
}

ParamList Model::parameters() const {
    ParamList out;
    encoder.collect(out);
    temporal.collect(out);
    head.collect(out);
    return out;
}

ad::Tensor Model::static_representation(const encoder::EncoderGraph& graph) const {
    if (ablation == Ablation::NG) return encoder.embeddings;
    encoder::EncoderOptions opts;
    opts.fusion = ablation == Ablation::NA ? encoder::FusionMode::Bilinear : encoder::FusionMode::CrossRelation;
    return encoder::encode(graph, encoder, opts).fused;
}

temporal::ReplayOptions Model::replay_options() const {
    return {ablation != Ablation::NTS, activation};
}

ad::Tensor predict_scores(const ad::Tensor& h_u, const PredictionHead& head) {
    return ad::add(ad::matvec(head.weight, h_u), head.bias);
}

ad::Tensor predict_scores(const ad::Tensor& h_u, const PredictionHead& head, const ad::Tensor& poi_states) {
    return ad::add(predict_scores(h_u, head), ad::matvec(poi_states, h_u));
}

ad::Tensor model_scores(const Model& model, const temporal::DynamicState& state, data::UserId user) {
    const ad::Tensor h_u = state.user(user);
    if (!model.poi_state_scoring) return predict_scores(h_u, model.head);
    std::vector<ad::Tensor> rows;
    rows.reserve(state.num_pois());
    for (data::PoiId l = 0; l < state.num_pois(); ++l) rows.push_back(state.poi(l));
    return predict_scores(h_u, model.head, ad::stack_rows(rows));
}

std::vector<Ranked> top_k(std::span<const double> scores, std::size_t k) {
    for (double s : scores)
        if (!std::isfinite(s)) throw NumericError("top_k: non-finite score");
    std::vector<data::PoiId> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    const std::size_t n = std::min(k, idx.size());
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n), idx.end(),
                      [&](data::PoiId a, data::PoiId b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); });
    std::vector<Ranked> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back({idx[i], scores[idx[i]]});
    return out;
}

std::size_t rank_of(std::span<const double> scores, data::PoiId truth) {
    if (truth >= scores.size()) throw ContractError("rank_of: truth " + std::to_string(truth) + " out of range");
    const double t = scores[truth];
    if (!std::isfinite(t)) throw NumericError("rank_of: non-finite score");
    std::size_t rank = 1;
    for (std::size_t j = 0; j < scores.size(); ++j)
        if (scores[j] > t || (scores[j] == t && j < truth)) ++rank;
    return rank;
}

Metrics metrics_from_ranks(std::span<const std::size_t> ranks, std::size_t k) {
    Metrics m;
    m.count = ranks.size();
    if (ranks.empty()) return m;
    for (auto r : ranks) {
        if (r >= 1 && r <= k) {
            m.recall += 1.0;
            m.mrr += 1.0 / static_cast<double>(r);
        }
    }
    m.recall /= static_cast<double>(ranks.size());
    m.mrr /= static_cast<double>(ranks.size());
    return m;
}

Metrics evaluate(std::span<const std::vector<data::PoiId>> ranked, std::span<const data::PoiId> truths, std::size_t k) {
    if (ranked.size() != truths.size()) throw ContractError("evaluate: one truth per ranked list required");
    std::vector<std::size_t> ranks;
    ranks.reserve(truths.size());
    for (std::size_t i = 0; i < truths.size(); ++i) {
        const auto& list = ranked[i];
        const auto limit = list.begin() + static_cast<std::ptrdiff_t>(std::min(k, list.size()));
        const auto it = std::find(list.begin(), limit, truths[i]);
        ranks.push_back(it == limit ? 0 : static_cast<std::size_t>(it - list.begin()) + 1);
    }
    return metrics_from_ranks(ranks, k);
}

MarkovBaseline::MarkovBaseline(std::span<const data::CheckinEvent> history, std::size_t num_pois)
    : num_pois_(num_pois), counts_(num_pois, std::vector<std::size_t>(num_pois, 0)), popularity_(num_pois, 0) {
    std::map<data::UserId, data::PoiId> last;
    for (const auto& e : history) {
        if (e.poi >= num_pois) throw RangeError("MarkovBaseline: POI " + std::to_string(e.poi) + " out of range");
        ++popularity_[e.poi];
        const auto it = last.find(e.user);
        if (it != last.end()) ++counts_[it->second][e.poi];
        last[e.user] = e.poi;
    }
}

std::size_t MarkovBaseline::transitions(data::PoiId from, data::PoiId to) const { return counts_.at(from).at(to); }

std::vector<double> MarkovBaseline::scores(std::optional<data::PoiId> current) const {
    std::vector<double> s(num_pois_);
    const bool seen = current && *current < num_pois_ &&
                      std::any_of(counts_[*current].begin(), counts_[*current].end(), [](auto c) { return c > 0; });
    for (std::size_t j = 0; j < num_pois_; ++j)
        s[j] = static_cast<double>(seen ? counts_[*current][j] : popularity_[j]);
    return s;
}

Metrics markov_baseline(std::span<const data::CheckinEvent> history, std::span<const data::CheckinEvent> test,
                        std::size_t num_pois, std::size_t k) {
    const MarkovBaseline model(history, num_pois);
    std::map<data::UserId, data::PoiId> current;
    for (const auto& e : history) current[e.user] = e.poi;
    std::vector<std::size_t> ranks;
    ranks.reserve(test.size());
    for (const auto& e : test) {
        const auto it = current.find(e.user);
        const auto s = model.scores(it == current.end() ? std::nullopt : std::optional<data::PoiId>(it->second));
        ranks.push_back(rank_of(s, e.poi));
        current[e.user] = e.poi;
    }
    return metrics_from_ranks(ranks, k);
}

void adam_step(const ParamList& params, AdamState& state, const AdamOptions& o) {
    if (state.m.size() != params.size()) {
        state.m.assign(params.size(), {});
        state.v.assign(params.size(), {});
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i].tensor.size(), 0.0);
            state.v[i].assign(params[i].tensor.size(), 0.0);
        }
        state.step = 0;
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(o.beta1, t);
    const double c2 = 1.0 - std::pow(o.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        ad::Tensor p = params[i].tensor;
        const auto g = p.grad();
        auto w = p.mutable_values();
        auto& m = state.m[i];
        auto& v = state.v[i];
        if (m.size() != w.size()) throw DimensionError("adam_step: state does not match parameter " + params[i].name);
        for (std::size_t j = 0; j < w.size(); ++j) {
            const double gj = g.empty() ? 0.0 : g[j];
            m[j] = o.beta1 * m[j] + (1.0 - o.beta1) * gj;
            v[j] = o.beta2 * v[j] + (1.0 - o.beta2) * gj * gj;
            w[j] -= o.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + o.eps);
        }
    }
}

TransitionMemory::TransitionMemory(std::size_t num_users, std::size_t num_pois)
    : users_(num_users), pois_(num_pois) {}

void TransitionMemory::record(const data::CheckinEvent& e, const ad::Tensor& h_u, const ad::Tensor& h_l,
                              temporal::Intervals intervals) {
    const auto u = h_u.values();
    const auto l = h_l.values();
    users_.at(e.user) = Step{{u.begin(), u.end()}, {l.begin(), l.end()}, intervals};
    pois_.at(e.poi) = Step{{l.begin(), l.end()}, {u.begin(), u.end()}, intervals};
}

void TransitionMemory::reanchor(const Model& model, std::span<const data::CheckinEvent> events,
                                temporal::DynamicState& state) const {
    const auto& tp = model.temporal;
    const auto opts = model.replay_options();
    auto embed = [&](const Step& s) {
        if (!opts.use_intervals) {
            const ad::Tensor zero = ad::Tensor::zeros({tp.dim()});
            return std::pair{zero, zero};
        }
        return std::pair{temporal::interval_embedding(s.intervals.dt, tp.time_short, tp.time_long, tp.theta_t),
                         temporal::interval_embedding(s.intervals.dd, tp.dist_short, tp.dist_long, tp.theta_d)};
    };
    std::vector<bool> user_done(users_.size()), poi_done(pois_.size());
    for (const auto& e : events) {
        if (!user_done[e.user] && users_[e.user]) {
            const Step& s = *users_[e.user];
            const auto [zt, zd] = embed(s);
            const ad::Tensor self = ad::passthrough(ad::row(state.base(), e.user), ad::Tensor::vector(s.self));
            state.set_user(e.user, temporal::update_user(self, ad::Tensor::vector(s.other), zt, zd, tp, opts.activation));
        }
        if (!poi_done[e.poi] && pois_[e.poi]) {
            const Step& s = *pois_[e.poi];
            const auto [zt, zd] = embed(s);
            const temporal::Visitor v{ad::Tensor::vector(s.other), zt, zd};
            const ad::Tensor self =
                ad::passthrough(ad::row(state.base(), state.num_users() + e.poi), ad::Tensor::vector(s.self));
            state.set_poi(e.poi, temporal::update_poi(self, {&v, 1}, tp, opts.activation));
        }
        user_done[e.user] = true;
        poi_done[e.poi] = true;
    }
}

ad::Tensor window_loss(const Model& model, std::span<const data::CheckinEvent> events,
                       std::span<const data::Poi> pois, temporal::DynamicState& state, TransitionMemory* memory) {
    if (events.empty()) throw ContractError("window_loss: no events");
    std::vector<ad::Tensor> losses;
    losses.reserve(events.size());
    if (!model.uses_replay()) {
        for (const auto& e : events) losses.push_back(ad::cross_entropy(model_scores(model, state, e.user), e.poi));
    } else {
        const auto plan = temporal::plan_tbatches(events);
        temporal::replay(plan, events, pois, model.temporal, state, model.replay_options(),
                         [&](std::size_t i, const ad::Tensor& h_u, const ad::Tensor& h_l) {
                             const auto& e = events[i];
                             if (memory) memory->record(e, h_u, h_l, temporal::intervals_for(state, e, pois));
                             losses.push_back(ad::cross_entropy(model_scores(model, state, e.user), e.poi));
                         });
    }
    return ad::scale(ad::add_n(losses), 1.0 / static_cast<double>(losses.size()));
}

void advance(const Model& model, std::span<const data::CheckinEvent> events, std::span<const data::Poi> pois,
             temporal::DynamicState& state) {
    if (!model.uses_replay() || events.empty()) return;
    temporal::replay(temporal::plan_tbatches(events), events, pois, model.temporal, state, model.replay_options());
}

std::vector<std::size_t> rank_events(const Model& model, std::span<const data::CheckinEvent> events,
                                     std::span<const data::Poi> pois, temporal::DynamicState& state) {
    std::vector<std::size_t> ranks(events.size());
    auto score = [&](std::size_t i) {
        ranks[i] = rank_of(model_scores(model, state, events[i].user).values(), events[i].poi);
    };
    if (!model.uses_replay()) {
        for (std::size_t i = 0; i < events.size(); ++i) score(i);
    } else if (!events.empty()) {
        temporal::replay(temporal::plan_tbatches(events), events, pois, model.temporal, state, model.replay_options(),
                         [&](std::size_t i, const ad::Tensor&, const ad::Tensor&) { score(i); });
    }
    return ranks;
}

TrainResult train(const data::Dataset& dataset, const TrainConfig& cfg, const EpochCallback& on_epoch) {
    cfg.validate();
    const data::Split split = data::chronological_split(dataset, {}, cfg.split_mode);
    if (split.train.empty()) throw ValidationError("train: empty training split");

    const auto graphs = encoder::build_graphs(dataset, split.train);
    const encoder::EncoderGraph graph(graphs);
    const std::size_t U = dataset.num_users;
    const std::size_t L = dataset.num_pois();

    Rng rng(cfg.seed);
    TrainResult result;
    result.seed = cfg.seed;
    result.ablation = cfg.ablation;
    result.k = cfg.k;
    result.model = Model::init({U, L, dataset.num_relation_types, cfg.dim, cfg.gcn_layers}, cfg, rng);
    Model& model = result.model;
    const ParamList params = model.parameters();

    auto measure = [&](std::size_t epoch, double train_loss) {
        const ad::Tensor base = model.static_representation(graph);
        temporal::DynamicState state(base, U, L);
        EpochLog log{epoch, train_loss, window_loss(model, split.train, dataset.pois, state).item(), {}};
        log.validation = metrics_from_ranks(rank_events(model, split.validation, dataset.pois, state), cfg.k);
        return log;
    };

    result.epochs.push_back(measure(0, 0.0));
    if (on_epoch) on_epoch(result.epochs.back());
    double best_recall = result.epochs.back().validation.recall;
    auto best_values = snapshot(params);

    const auto windows = windows_of(split.train, cfg.window_buckets, cfg.window_events);
    AdamState adam;
    const AdamOptions adam_opts{cfg.lr};
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        temporal::DynamicState state;
        TransitionMemory memory(U, L);
        double total = 0.0;
        std::unique_ptr<ad::Tape> tape;
        for (std::size_t w = 0; w < windows.size(); ++w) {
            const bool block_start = w % cfg.bptt_windows == 0;
            if (block_start) {
                state.detach();
                tape = std::make_unique<ad::Tape>();
            }
            ad::TapeScope scope(*tape);
            ad::Tensor base = model.static_representation(graph);
            if (w == 0) {
                state = temporal::DynamicState(base, U, L);
            } else {
                state.rebase(base);
                if (block_start && model.uses_replay()) memory.reanchor(model, windows[w], state);
            }
            const ad::Tensor loss = window_loss(model, windows[w], dataset.pois, state, &memory);
            if (!std::isfinite(loss.item())) throw TrainingError(epoch, w, "non-finite loss");
            for (const auto& p : params) ad::Tensor(p.tensor).zero_grad();
            tape->backward(loss);
            adam_step(params, adam, adam_opts);
            total += loss.item();
        }
        state.detach();
        const EpochLog log = measure(epoch, total / static_cast<double>(windows.size()));
        result.epochs.push_back(log);
        if (on_epoch) on_epoch(log);
        if (log.validation.recall > best_recall) {
            best_recall = log.validation.recall;
            best_values = snapshot(params);
            result.best_epoch = epoch;
        }
    }

    restore(params, best_values);
    result.validation = result.epochs[result.best_epoch].validation;
    result.test = evaluate_split(model, dataset, split, cfg.k);
    return result;
}

Metrics evaluate_split(const Model& model, const data::Dataset& dataset, const data::Split& split, std::size_t k) {
    const encoder::EncoderGraph graph(encoder::build_graphs(dataset, split.train));
    temporal::DynamicState state(model.static_representation(graph), dataset.num_users, dataset.num_pois());
    advance(model, split.train, dataset.pois, state);
    advance(model, split.validation, dataset.pois, state);
    return metrics_from_ranks(rank_events(model, split.test, dataset.pois, state), k);
}

temporal::DynamicState final_state(const Model& model, const data::Dataset& dataset,
                                   std::span<const data::CheckinEvent> graph_events) {
    const auto graphs = encoder::build_graphs(dataset, graph_events);
    const encoder::EncoderGraph graph(graphs);
    temporal::DynamicState state(model.static_representation(graph), dataset.num_users, dataset.num_pois());
    advance(model, dataset.events, dataset.pois, state);
    return state;
}

double MetricsReport::mean_recall() const {
    std::vector<double> xs;
    for (const auto& m : per_seed) xs.push_back(m.recall);
    return mean_of(xs);
}

double MetricsReport::mean_mrr() const {
    std::vector<double> xs;
    for (const auto& m : per_seed) xs.push_back(m.mrr);
    return mean_of(xs);
}

double MetricsReport::std_recall() const {
    std::vector<double> xs;
    for (const auto& m : per_seed) xs.push_back(m.recall);
    return std_of(xs);
}

double MetricsReport::std_mrr() const {
    std::vector<double> xs;
    for (const auto& m : per_seed) xs.push_back(m.mrr);
    return std_of(xs);
}

std::string MetricsReport::key_value_block() const {
    const std::string ks = std::to_string(k);
    std::ostringstream out;
    out << "recall@" << ks << "=" << fmt("%.6f", mean_recall()) << "\n";
    out << "mrr@" << ks << "=" << fmt("%.6f", mean_mrr()) << "\n";
    out << "seed=" << (seeds.empty() ? 0 : seeds.front()) << "\n";
    out << "ablation=" << ablation_name(ablation) << "\n";
    if (per_seed.size() > 1) {
        out << "recall@" << ks << "_std=" << fmt("%.6f", std_recall()) << "\n";
        out << "mrr@" << ks << "_std=" << fmt("%.6f", std_mrr()) << "\n";
        out << "seeds=";
        for (std::size_t i = 0; i < seeds.size(); ++i) out << (i ? "," : "") << seeds[i];
        out << "\n";
    }
    return out.str();
}

std::string MetricsReport::table() const {
    const std::string ks = std::to_string(k);
    std::ostringstream out;
    char line[128];
    std::snprintf(line, sizeof line, "%-10s %-8s %12s %12s\n", "seed", "variant", ("recall@" + ks).c_str(),
                  ("mrr@" + ks).c_str());
    out << line;
    for (std::size_t i = 0; i < per_seed.size(); ++i) {
        std::snprintf(line, sizeof line, "%-10llu %-8s %12.6f %12.6f\n", static_cast<unsigned long long>(seeds[i]),
                      ablation_name(ablation).c_str(), per_seed[i].recall, per_seed[i].mrr);
        out << line;
    }
    std::snprintf(line, sizeof line, "%-10s %-8s %12.6f %12.6f\n", "mean", ablation_name(ablation).c_str(),
                  mean_recall(), mean_mrr());
    out << line;
    std::snprintf(line, sizeof line, "%-10s %-8s %12.6f %12.6f\n", "std", ablation_name(ablation).c_str(),
                  std_recall(), std_mrr());
    out << line;
    return out.str();
}

MetricsReport report_of(const TrainResult& result) {
    return {result.k, result.ablation, {result.seed}, {result.test}};
}

MetricsReport aggregate(std::span<const TrainResult> results) {
    if (results.empty()) throw ContractError("aggregate: no results");
    MetricsReport r{results.front().k, results.front().ablation, {}, {}};
    for (const auto& res : results) {
        if (res.k != r.k || res.ablation != r.ablation) throw ContractError("aggregate: mixed k or ablation");
        r.seeds.push_back(res.seed);
        r.per_seed.push_back(res.test);
    }
    return r;
}

void save_model(const std::filesystem::path& path, const Model& model, const KeyValueConfig& settings) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write parameters to " + path.string());
    KeyValueConfig all = settings;
    all.set("model.num_users", std::to_string(model.shape.num_users));
    all.set("model.num_pois", std::to_string(model.shape.num_pois));
    all.set("model.num_social", std::to_string(model.shape.num_social));
    all.set("model.dim", std::to_string(model.shape.dim));
    all.set("model.gcn_layers", std::to_string(model.shape.gcn_layers));
    all.set("model.theta_t", fmt("%.17g", model.temporal.theta_t));
    all.set("model.theta_d", fmt("%.17g", model.temporal.theta_d));
    all.set("ablation", ablation_name(model.ablation));
    all.set("activation", model.activation == temporal::Activation::Tanh ? "tanh" : "sigmoid");
    all.set("poi_state_scoring", model.poi_state_scoring ? "true" : "false");

    out << "memo-params v1\n";
    for (const auto& [key, value] : all.entries()) out << "config " << key << "=" << value << "\n";
    for (const auto& p : model.parameters()) {
        out << "tensor " << p.name << " " << p.tensor.rank();
        for (auto dim : p.tensor.shape()) out << " " << dim;
        out << "\n";
        const auto v = p.tensor.values();
        for (std::size_t i = 0; i < v.size(); ++i) out << (i ? " " : "") << fmt("%.17g", v[i]);
        out << "\n";
    }
    out << "end\n";
    if (!out) throw IoError("failed writing parameters to " + path.string());
}

LoadedModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read parameters from " + path.string());
    const std::string file = path.string();
    std::string line;
    std::size_t lineno = 1;
    if (!std::getline(in, line) || line != "memo-params v1") throw ParseError(file, 1, "missing 'memo-params v1' header");

    LoadedModel loaded;
    struct Raw {
        ad::Shape shape;
        std::vector<double> values;
    };
    std::map<std::string, Raw> tensors;
    bool ended = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (line == "end") {
            ended = true;
            break;
        }
        if (line.rfind("config ", 0) == 0) {
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw ParseError(file, lineno, "config line without '='");
            loaded.settings.set(line.substr(7, eq - 7), line.substr(eq + 1));
            continue;
        }
        if (line.rfind("tensor ", 0) != 0) throw ParseError(file, lineno, "unexpected line");
        std::istringstream head(line.substr(7));
        std::string name;
        std::size_t rank = 0;
        if (!(head >> name >> rank)) throw ParseError(file, lineno, "malformed tensor header");
        Raw raw;
        for (std::size_t i = 0; i < rank; ++i) {
            std::size_t dim = 0;
            if (!(head >> dim)) throw ParseError(file, lineno, "malformed tensor shape");
            raw.shape.push_back(dim);
        }
        if (!std::getline(in, line)) throw ParseError(file, lineno, "missing values for " + name);
        ++lineno;
        const std::size_t n = ad::numel(raw.shape);
        raw.values.reserve(n);
        const char* p = line.data();
        const char* end = line.data() + line.size();
        while (p < end) {
            while (p < end && *p == ' ') ++p;
            if (p == end) break;
            double v = 0.0;
            const auto [next, ec] = std::from_chars(p, end, v);
            if (ec != std::errc{}) throw ParseError(file, lineno, "bad number in " + name);
            raw.values.push_back(v);
            p = next;
        }
        if (raw.values.size() != n) throw ParseError(file, lineno, "value count mismatch for " + name);
        tensors[name] = std::move(raw);
    }
    if (!ended) throw ParseError(file, lineno, "truncated parameter file");

    const auto& s = loaded.settings;
    auto need = [&](const std::string& key) {
        if (!s.has(key)) throw ValidationError(file + ": missing setting " + key);
        return positive_size(s, key, 0);
    };
    ModelShape shape{need("model.num_users"), need("model.num_pois"), need("model.num_social"), need("model.dim"),
                     need("model.gcn_layers")};
    TrainConfig cfg;
    cfg.ablation = parse_ablation(s.get_string("ablation", "full"));
    cfg.activation =
        s.get_string("activation", "tanh") == "sigmoid" ? temporal::Activation::Sigmoid : temporal::Activation::Tanh;
    cfg.poi_state_scoring = s.get_bool("poi_state_scoring", false);
    cfg.theta_t = s.get_double("model.theta_t", cfg.theta_t);
    cfg.theta_d = s.get_double("model.theta_d", cfg.theta_d);
    Rng rng(0);
    loaded.model = Model::init(shape, cfg, rng);
    for (const auto& p : loaded.model.parameters()) {
        const auto it = tensors.find(p.name);
        if (it == tensors.end()) throw ValidationError(file + ": missing tensor " + p.name);
        if (it->second.shape != p.tensor.shape())
            throw ValidationError(file + ": tensor " + p.name + " has shape " + ad::shape_string(it->second.shape) +
                                  ", expected " + ad::shape_string(p.tensor.shape()));
        auto dst = ad::Tensor(p.tensor).mutable_values();
        std::copy(it->second.values.begin(), it->second.values.end(), dst.begin());
    }
    return loaded;
}

}  // namespace memo::train
