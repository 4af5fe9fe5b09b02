// Acceptance checks, one PASS/FAIL line each. With no arguments every check
// runs; otherwise only the named ones. Exit status is 1 if any check fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "memo/cli/commands.hpp"
#include "memo/encoder.hpp"
#include "memo/error.hpp"
#include "memo/relation_infer.hpp"
#include "memo/synth.hpp"
#include "memo/temporal.hpp"
#include "memo/train.hpp"
#include "oracles.hpp"
#include "temp_dir.hpp"

namespace {

using namespace memo;
using Clock = std::chrono::steady_clock;

constexpr double kGradTolerance = 1e-3;
constexpr double kGradSeconds = 60.0;
constexpr int kAttentionDraws = 100;
constexpr double kAttentionTolerance = 1e-10;
constexpr int kStreams = 1000;
constexpr std::size_t kMaxStreamEvents = 500;
constexpr int kOrderingSeeds = 5;
constexpr double kMarkovMargin = 0.05;
constexpr double kOrderingSeconds = 600.0;
constexpr double kInferenceFloor = 0.95;
constexpr int kMetricMatrices = 1000;

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* spec, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

Outcome gradient_suite() {
    const auto t0 = Clock::now();
    Rng rng(2024);
    data::Dataset ds;
    ds.num_users = 4;
    ds.num_relation_types = 2;
    ds.pois = testing::random_pois(rng, 3);
    ds.relations = {{0, 1, 0}, {2, 3, 0}, {1, 2, 1}};
    // Two windows of four events, one timestamp bucket each.
    const std::int64_t B = ds.timeline.bucket_length;
    ds.events = {{0, 0, 10, 0},     {1, 1, 20, 0},     {2, 2, 30, 0},     {3, 0, 4000, 0},
                 {0, 1, B + 5, 1},  {1, 2, B + 900, 1}, {2, 0, B + 2000, 1}, {3, 1, B + 7000, 1}};
    data::sort_events(ds.events);
    const std::span<const data::CheckinEvent> all(ds.events);
    const auto first = all.subspan(0, 4), second = all.subspan(4);
    const encoder::EncoderGraph graph(encoder::build_graphs(ds, all));

    double worst = 0.0;
    std::size_t tensors = 0;
    std::string worst_name;
    for (auto init : {temporal::RecurrentInit::Identity, temporal::RecurrentInit::Glorot}) {
        train::TrainConfig cfg;
        cfg.recurrent_init = init;
        cfg.theta_t = 1000.0;
        cfg.theta_d = 2000.0;
        Rng mrng(7);
        const auto model = train::Model::init({4, 3, 2, 4, 1}, cfg, mrng);
        const auto checks = testing::check_gradients(model.parameters(), [&] {
            temporal::DynamicState state(model.static_representation(graph), 4, 3);
            const ad::Tensor a = train::window_loss(model, first, ds.pois, state);
            const ad::Tensor b = train::window_loss(model, second, ds.pois, state);
            return ad::add(a, b);
        });
        for (const auto& c : checks) {
            ++tensors;
            if (c.rel_error > worst) {
                worst = c.rel_error;
                worst_name = c.name;
            }
        }
    }
    const double secs = seconds_since(t0);
    return {worst <= kGradTolerance && secs < kGradSeconds,
            "max rel err " + fmt("%.2e", worst) + " (" + worst_name + ") over " + std::to_string(tensors) +
                " tensors, " + fmt("%.1f", secs) + " s; tol " + fmt("%.0e", kGradTolerance) + ", limit " +
                fmt("%.0f", kGradSeconds) + " s"};
}

Outcome attention_normalization() {
    Rng rng(99);
    double worst = 0.0;
    bool negative = false;
    std::size_t rows = 0;
    auto check_row = [&](double sum) {
        worst = std::max(worst, std::abs(sum - 1.0));
        ++rows;
    };
    for (int draw = 0; draw < kAttentionDraws; ++draw) {
        synth::SynthConfig sc;
        sc.num_users = 30;
        sc.num_pois = 15;
        sc.events_per_user = 10;
        sc.relation_density = {0.1, 0.2};
        sc.seed = 1000 + static_cast<std::uint64_t>(draw);
        const auto ds = synth::generate(sc).dataset;
        const encoder::EncoderGraph graph(encoder::build_graphs(ds, ds.events));
        const auto params = encoder::EncoderParams::init({ds.num_users + ds.num_pois(), 3, 8, 1 + static_cast<std::size_t>(draw % 2)}, rng);
        const auto mode = draw % 2 ? encoder::FusionMode::Bilinear : encoder::FusionMode::CrossRelation;
        const auto out = encoder::encode(graph, params, {mode, 0.2});
        for (std::size_t p = 0; p < 3; ++p) {
            const auto& off = graph.hoods[p].offsets;
            for (const auto& w : out.neighbor_weights[p]) {
                const auto v = w.values();
                for (std::size_t i = 0; i + 1 < off.size(); ++i) {
                    double s = 0.0;
                    for (std::size_t e = off[i]; e < off[i + 1]; ++e) {
                        negative |= v[e] < 0.0;
                        s += v[e];
                    }
                    check_row(s);
                }
            }
            const auto& a = out.alpha[p];
            for (std::size_t i = 0; i < a.rows(); ++i) {
                double s = 0.0;
                for (std::size_t j = 0; j < a.cols(); ++j) {
                    negative |= a.at(i, j) < 0.0;
                    s += a.at(i, j);
                }
                check_row(s);
            }
        }
    }
    return {worst <= kAttentionTolerance && !negative,
            std::to_string(rows) + " rows over " + std::to_string(kAttentionDraws) + " draws, max |sum-1| " +
                fmt("%.2e", worst) + (negative ? ", negative entry found" : ", all entries >= 0") + "; tol " +
                fmt("%.0e", kAttentionTolerance)};
}

Outcome tbatch_suite() {
    Rng rng(5150);
    std::uniform_int_distribution<std::size_t> len(1, kMaxStreamEvents), ent(1, 40);
    std::size_t invalid = 0, mismatched = 0, events = 0;
    for (int s = 0; s < kStreams; ++s) {
        const std::size_t n = len(rng), users = ent(rng), pois = ent(rng);
        const auto ev = testing::random_stream(rng, n, users, pois, static_cast<std::int64_t>(n));
        events += n;
        const auto plan = temporal::plan_tbatches(ev);
        try {
            temporal::validate_plan(plan, ev);
        } catch (const ContractError&) {
            ++invalid;
            continue;
        }
        const auto poi_list = testing::random_pois(rng, pois);
        const auto params = temporal::TemporalParams::init(4, 50.0, 1500.0, rng, temporal::RecurrentInit::Glorot);
        const ad::Tensor base = testing::random_leaf(rng, {users + pois, 4}).detach();
        temporal::DynamicState a(base, users, pois), b(base, users, pois);
        temporal::replay(plan, ev, poi_list, params, a, {});
        temporal::replay_sequential(ev, poi_list, params, b, {});
        bool same = true;
        for (std::size_t u = 0; u < users && same; ++u) {
            const auto x = a.user(u), y = b.user(u);
            same = std::equal(x.values().begin(), x.values().end(), y.values().begin());
        }
        for (std::size_t l = 0; l < pois && same; ++l) {
            const auto x = a.poi(l), y = b.poi(l);
            same = std::equal(x.values().begin(), x.values().end(), y.values().begin());
        }
        mismatched += !same;
    }
    return {invalid == 0 && mismatched == 0,
            std::to_string(kStreams) + " streams, " + std::to_string(events) + " events; invariant violations " +
                std::to_string(invalid) + ", batched/sequential mismatches " + std::to_string(mismatched)};
}

Outcome synthetic_ordering() {
    const auto t0 = Clock::now();
    const std::vector<train::Ablation> variants{train::Ablation::Full, train::Ablation::NG, train::Ablation::NR,
                                                train::Ablation::NTS};
    std::map<train::Ablation, double> mean;
    double markov = 0.0;
    for (int seed = 1; seed <= kOrderingSeeds; ++seed) {
        synth::SynthConfig sc;
        sc.num_users = 200;
        sc.num_pois = 50;
        sc.num_relation_types = 2;
        sc.mixing = 0.8;
        sc.seed = static_cast<std::uint64_t>(seed);
        const auto ds = synth::generate(sc).dataset;
        const auto split = data::chronological_split(ds);
        std::vector<data::CheckinEvent> history = split.train;
        history.insert(history.end(), split.validation.begin(), split.validation.end());
        markov += train::markov_baseline(history, split.test, ds.num_pois(), 10).recall / kOrderingSeeds;
        for (auto v : variants) {
            train::TrainConfig tc;
            tc.dim = 32;
            tc.epochs = 10;
            tc.seed = static_cast<std::uint64_t>(seed);
            tc.ablation = v;
            mean[v] += train::train(ds, tc).test.recall / kOrderingSeeds;
        }
    }
    const double secs = seconds_since(t0);
    const double full = mean[train::Ablation::Full];
    bool pass = full >= markov + kMarkovMargin && secs < kOrderingSeconds;
    std::string detail = "Recall@10 full " + fmt("%.4f", full) + ", Markov " + fmt("%.4f", markov);
    for (auto v : {train::Ablation::NG, train::Ablation::NR, train::Ablation::NTS}) {
        pass = pass && full >= mean[v];
        detail += ", " + train::ablation_name(v) + " " + fmt("%.4f", mean[v]);
    }
    detail += "; need full >= Markov + " + fmt("%.2f", kMarkovMargin) + " and full >= each variant; " +
              fmt("%.0f", secs) + " s (limit " + fmt("%.0f", kOrderingSeconds) + " s)";
    return {pass, detail};
}

Outcome relation_inference() {
    double min_p = 1.0, min_r = 1.0;
    std::size_t truth_total = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        synth::SynthConfig sc;
        sc.anchor_visits = true;
        sc.seed = seed;
        const auto r = synth::generate(sc);
        const auto inferred = infer::infer_relations(r.dataset);
        const auto& truth = r.dataset.relations;
        std::vector<data::RelationTriple> common;
        std::set_intersection(inferred.begin(), inferred.end(), truth.begin(), truth.end(),
                              std::back_inserter(common));
        const double tp = static_cast<double>(common.size());
        min_p = std::min(min_p, inferred.empty() ? 0.0 : tp / static_cast<double>(inferred.size()));
        min_r = std::min(min_r, truth.empty() ? 1.0 : tp / static_cast<double>(truth.size()));
        truth_total += truth.size();
    }
    return {min_p >= kInferenceFloor && min_r >= kInferenceFloor,
            "5 seeds, " + std::to_string(truth_total) + " planted ties; min precision " + fmt("%.4f", min_p) +
                ", min recall " + fmt("%.4f", min_r) + "; floor " + fmt("%.2f", kInferenceFloor)};
}

Outcome metric_correctness() {
    Rng rng(314);
    std::uniform_int_distribution<std::size_t> dim(1, 60), ks(1, 20);
    std::uniform_int_distribution<int> coarse(0, 9);
    std::size_t mismatches = 0;
    for (int m = 0; m < kMetricMatrices; ++m) {
        const std::size_t rows = dim(rng), cols = 1 + dim(rng), k = ks(rng);
        std::uniform_int_distribution<std::size_t> pick(0, cols - 1);
        std::vector<std::size_t> ranks;
        std::vector<std::vector<data::PoiId>> lists;
        std::vector<data::PoiId> truths;
        std::size_t hits = 0;
        double rr = 0.0;
        for (std::size_t r = 0; r < rows; ++r) {
            std::vector<double> s = m % 3 == 0 ? std::vector<double>(cols) : testing::random_values(rng, cols);
            if (m % 3 == 0)
                for (auto& x : s) x = coarse(rng);
            const auto t = pick(rng);
            const std::size_t rank = testing::brute_rank(s, t);
            if (rank <= k) {
                ++hits;
                rr += 1.0 / static_cast<double>(rank);
            }
            ranks.push_back(train::rank_of(s, t));
            std::vector<data::PoiId> list;
            for (const auto& x : train::top_k(s, k)) list.push_back(x.poi);
            mismatches += list != testing::brute_top_k(s, k);
            lists.push_back(std::move(list));
            truths.push_back(t);
        }
        const double recall = static_cast<double>(hits) / static_cast<double>(rows);
        const double mrr = rr / static_cast<double>(rows);
        const auto a = train::metrics_from_ranks(ranks, k);
        const auto b = train::evaluate(lists, truths, k);
        mismatches += a.recall != recall || a.mrr != mrr || b.recall != recall || b.mrr != mrr;
    }
    return {mismatches == 0, std::to_string(kMetricMatrices) + " matrices, exact mismatches " +
                                 std::to_string(mismatches)};
}

Outcome determinism() {
    testing::TempDir dir;
    std::ostringstream sink;
    const auto data_dir = (dir / "data").string();
    if (cli::run({"generate", "-o", data_dir, "--seed", "11"}, sink, sink) != 0) return {false, "generate failed"};
    const std::vector<std::string> args{"train",      "--checkins", data_dir + "/checkins.csv",
                                        "--relations", data_dir + "/relations.csv",
                                        "-o",          (dir / "run").string(),
                                        "--seed",      "11",
                                        "--d",         "32",
                                        "--epochs",    "2"};
    std::ostringstream out1, out2, err;
    const int c1 = cli::run(args, out1, err);
    const std::string manifest1 = testing::read_file(dir / "run" / "manifest.txt");
    const std::string params1 = testing::read_file(dir / "run" / "params.txt");
    const int c2 = cli::run(args, out2, err);
    const std::string manifest2 = testing::read_file(dir / "run" / "manifest.txt");
    const std::string params2 = testing::read_file(dir / "run" / "params.txt");
    const bool same = c1 == 0 && c2 == 0 && manifest1 == manifest2 && params1 == params2 && out1.str() == out2.str();
    std::string first_line = out1.str().substr(0, out1.str().find('\n'));
    return {same, "two train runs with identical manifests: exit " + std::to_string(c1) + "/" + std::to_string(c2) +
                      ", metrics blocks " + (out1.str() == out2.str() ? "identical" : "differ") + ", parameters " +
                      (params1 == params2 ? "identical" : "differ") + " (" +
                      first_line + ")"};
}

Outcome robustness() {
    synth::SynthConfig sc;
    sc.seed = 1;
    const auto ds = synth::generate(sc).dataset;
    struct Point {
        std::size_t d;
        double theta_t, theta_d;
    };
    std::vector<Point> grid;
    for (std::size_t d : {32u, 64u, 128u}) grid.push_back({d, 3600.0, 200.0});
    for (double t : {600.0, 21600.0}) grid.push_back({32, t, 200.0});
    for (double m : {50.0, 1000.0}) grid.push_back({32, 3600.0, m});
    std::size_t ok = 0;
    std::string failures;
    for (const auto& p : grid) {
        train::TrainConfig tc;
        tc.dim = p.d;
        tc.theta_t = p.theta_t;
        tc.theta_d = p.theta_d;
        tc.epochs = 2;
        tc.seed = 1;
        const std::string label = "d=" + std::to_string(p.d) + ",theta_t=" + fmt("%.0f", p.theta_t) +
                                  ",theta_d=" + fmt("%.0f", p.theta_d);
        try {
            const auto r = train::train(ds, tc);
            bool finite = std::isfinite(r.test.recall) && std::isfinite(r.test.mrr);
            for (const auto& e : r.epochs) finite = finite && std::isfinite(e.train_loss) && std::isfinite(e.eval_loss);
            if (finite) {
                ++ok;
            } else {
                failures += " " + label + ":non-finite";
            }
        } catch (const std::exception& e) {
            failures += " " + label + ":" + e.what();
        }
    }
    return {ok == grid.size(), std::to_string(ok) + "/" + std::to_string(grid.size()) +
                                   " settings trained 2 epochs with finite losses and metrics" + failures};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> checks{
        {"gradient_suite", gradient_suite},         {"attention_normalization", attention_normalization},
        {"tbatch_suite", tbatch_suite},             {"synthetic_ordering", synthetic_ordering},
        {"relation_inference", relation_inference}, {"metric_correctness", metric_correctness},
        {"determinism", determinism},               {"robustness", robustness},
    };
    CLI::App app{"memo acceptance checks", "memo_acceptance"};
    std::vector<std::string> selected;
    bool list = false;
    app.add_option("checks", selected, "checks to run (default: all)");
    app.add_flag("--list", list, "print the check names and exit");
    CLI11_PARSE(app, argc, argv);
    if (list) {
        for (const auto& [name, fn] : checks) std::cout << name << "\n";
        return 0;
    }
    for (const auto& s : selected) {
        if (std::none_of(checks.begin(), checks.end(), [&](const auto& c) { return c.first == s; })) {
            std::cerr << "unknown check '" << s << "'\n";
            return 2;
        }
    }
    bool all = true;
    for (const auto& [name, fn] : checks) {
        if (!selected.empty() && std::find(selected.begin(), selected.end(), name) == selected.end()) continue;
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        all = all && o.pass;
        std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
    }
    return all ? 0 : 1;
}
