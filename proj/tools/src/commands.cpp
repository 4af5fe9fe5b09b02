#include "memo/cli/commands.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <optional>
#include <ostream>
#include <utility>

#include "memo/data.hpp"
#include "memo/error.hpp"
#include "memo/relation_infer.hpp"
#include "memo/synth.hpp"
#include "memo/train.hpp"
#include "memo/version.hpp"

namespace memo::cli {

namespace {

namespace fs = std::filesystem;

std::string num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string metric(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

// Config layering: file, then repeated --set key=value, then dedicated flags.
struct Layered {
    std::string config_path;
    std::vector<std::string> sets;
    std::vector<std::pair<std::string, std::optional<std::string>>> flags;

    void add_to(CLI::App& app) {
        app.add_option("-c,--config", config_path, "key=value configuration file");
        app.add_option("--set", sets, "override one configuration key (key=value), repeatable");
    }

    void flag(CLI::App& app, const std::string& name, const std::string& key, const std::string& help) {
        flags.emplace_back(key, std::nullopt);
        // Stable addresses: the vector is reserved before any flag is added.
        app.add_option(name, flags.back().second, help);
    }

    KeyValueConfig resolve() const {
        KeyValueConfig cfg;
        if (!config_path.empty()) {
            if (!fs::exists(config_path)) throw ConfigError("config file not found: " + config_path);
            cfg = KeyValueConfig::load(config_path);
        }
        for (const auto& s : sets) {
            const auto eq = s.find('=');
            if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + s + "'");
            cfg.set(s.substr(0, eq), s.substr(eq + 1));
        }
        for (const auto& [key, value] : flags)
            if (value) cfg.set(key, *value);
        return cfg;
    }
};

KeyValueConfig synth_settings(const synth::SynthConfig& c) {
    KeyValueConfig out;
    out.set("num_users", std::to_string(c.num_users));
    out.set("num_pois", std::to_string(c.num_pois));
    out.set("num_relation_types", std::to_string(c.num_relation_types));
    out.set("events_per_user", std::to_string(c.events_per_user));
    std::string dens;
    for (std::size_t i = 0; i < c.relation_density.size(); ++i) dens += (i ? "," : "") + num(c.relation_density[i]);
    out.set("relation_density", dens);
    out.set("lambda", num(c.mixing));
    out.set("seed", std::to_string(c.seed));
    out.set("lat_min", num(c.extent.lat_min));
    out.set("lat_max", num(c.extent.lat_max));
    out.set("lon_min", num(c.extent.lon_min));
    out.set("lon_max", num(c.extent.lon_max));
    out.set("short_gap_prob", num(c.short_gap_prob));
    out.set("nearby_prob", num(c.nearby_prob));
    out.set("pois_per_area", std::to_string(c.pois_per_area));
    out.set("area_radius_m", num(c.area_radius_m));
    out.set("preference_concentration", num(c.preference_concentration));
    out.set("anchor_visits", c.anchor_visits ? "true" : "false");
    out.set("anchor_prob", num(c.anchor_prob));
    out.set("anchor_jitter_m", num(c.anchor_jitter_m));
    out.set("bucket_length_seconds", std::to_string(c.timeline.bucket_length));
    out.set("num_buckets", std::to_string(c.timeline.num_buckets));
    return out;
}

struct DataPaths {
    fs::path checkins;
    fs::path relations;
    std::size_t num_types = 2;
};

DataPaths data_paths(const KeyValueConfig& cfg) {
    DataPaths p;
    p.checkins = cfg.get_string("checkins", "");
    p.relations = cfg.get_string("relations", "");
    const auto types = cfg.get_int("num_relation_types", 2);
    if (types <= 0) throw ConfigError("num_relation_types must be positive");
    p.num_types = static_cast<std::size_t>(types);
    for (const auto* f : {&p.checkins, &p.relations}) {
        if (f->empty()) throw ConfigError("checkins and relations paths are required");
        if (!fs::is_regular_file(*f)) throw ConfigError("data file not found: " + f->string());
    }
    return p;
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("failed writing " + path.string());
}

int cmd_generate(const Layered& layers, const std::string& out_dir_flag, std::ostream& out) {
    KeyValueConfig cfg = layers.resolve();
    synth::SynthConfig sc;
    try {
        sc = synth::SynthConfig::from_config(cfg);
        sc.validate();
    } catch (const ValidationError& e) {
        throw ConfigError(e.what());
    }
    const fs::path dir = !out_dir_flag.empty() ? fs::path(out_dir_flag) : fs::path(cfg.get_string("output_dir", "."));
    ensure_dir(dir);

    RunManifest manifest;
    manifest.command = "generate";
    manifest.version = kVersion;
    manifest.seed = sc.seed;
    manifest.config = synth_settings(sc);
    manifest.config.set("output_dir", dir.string());
    if (!layers.config_path.empty()) manifest.inputs["config"] = layers.config_path;
    manifest.outputs["checkins"] = dir / "checkins.csv";
    manifest.outputs["relations"] = dir / "relations.csv";
    manifest.write(dir / "manifest.txt");

    const synth::SynthResult result = synth::generate(sc);
    data::write_checkins(result.dataset, dir / "checkins.csv");
    data::write_relations(result.dataset.relations, dir / "relations.csv");
    out << "users=" << result.dataset.num_users << " pois=" << result.dataset.num_pois()
        << " events=" << result.dataset.events.size() << " relations=" << result.dataset.relations.size() << "\n";
    return kOk;
}

int cmd_infer(const std::string& checkins, const std::string& out_path, const infer::InferOptions& opts,
              std::ostream& out) {
    const data::Dataset ds = data::load_checkins(checkins);
    const auto relations = infer::infer_relations(ds, opts);
    data::write_relations(relations, out_path);
    std::size_t family = 0, colleague = 0;
    for (const auto& r : relations) (r.type == 0 ? family : colleague)++;
    out << "family=" << family << " colleague=" << colleague << " total=" << relations.size() << "\n";
    return kOk;
}

int cmd_train(const Layered& layers, std::ostream& out, std::ostream& err) {
    const KeyValueConfig cfg = layers.resolve();
    const train::TrainConfig tc = train::TrainConfig::from_config(cfg);
    const DataPaths paths = data_paths(cfg);
    const auto runs = cfg.get_int("runs", 1);
    if (runs <= 0) throw ConfigError("runs must be positive");
    const fs::path dir = cfg.get_string("output_dir", ".");

    KeyValueConfig resolved = cfg;
    resolved.merge(tc.to_config());
    resolved.set("checkins", paths.checkins.string());
    resolved.set("relations", paths.relations.string());
    resolved.set("num_relation_types", std::to_string(paths.num_types));
    resolved.set("output_dir", dir.string());
    resolved.set("runs", std::to_string(runs));

    ensure_dir(dir);
    RunManifest manifest;
    manifest.command = "train";
    manifest.version = kVersion;
    manifest.seed = tc.seed;
    manifest.config = resolved;
    manifest.inputs["checkins"] = paths.checkins;
    manifest.inputs["relations"] = paths.relations;
    manifest.outputs["params"] = dir / "params.txt";
    manifest.outputs["metrics"] = dir / "metrics.txt";
    manifest.write(dir / "manifest.txt");

    const data::Dataset ds = data::load_dataset(paths.checkins, paths.relations, paths.num_types, tc.timeline);
    std::vector<train::TrainResult> results;
    for (std::int64_t r = 0; r < runs; ++r) {
        train::TrainConfig run_cfg = tc;
        run_cfg.seed = tc.seed + static_cast<std::uint64_t>(r);
        results.push_back(train::train(ds, run_cfg, [&](const train::EpochLog& log) {
            err << "seed " << run_cfg.seed << " epoch " << log.epoch << " train_loss=" << num(log.train_loss)
                << " eval_loss=" << num(log.eval_loss) << " val_recall@" << tc.k << "=" << num(log.validation.recall)
                << "\n";
        }));
    }
    train::save_model(dir / "params.txt", results.front().model, resolved);
    const std::string block = train::aggregate(results).key_value_block();
    write_text(dir / "metrics.txt", block);
    out << block;
    return kOk;
}

struct Restored {
    train::LoadedModel loaded;
    data::Dataset dataset;
    data::Split split;
    std::size_t k = 10;
};

Restored restore(const std::string& params, const std::string& checkins, const std::string& relations) {
    Restored r;
    if (!fs::is_regular_file(params)) throw ConfigError("parameter file not found: " + params);
    r.loaded = train::load_model(params);
    KeyValueConfig settings = r.loaded.settings;
    if (!checkins.empty()) settings.set("checkins", checkins);
    if (!relations.empty()) settings.set("relations", relations);
    const train::TrainConfig tc = train::TrainConfig::from_config(settings);
    const DataPaths paths = data_paths(settings);
    r.dataset = data::load_dataset(paths.checkins, paths.relations, paths.num_types, tc.timeline);
    const auto& shape = r.loaded.model.shape;
    if (r.dataset.num_users != shape.num_users || r.dataset.num_pois() != shape.num_pois) {
        throw ValidationError("dataset has " + std::to_string(r.dataset.num_users) + " users and " +
                              std::to_string(r.dataset.num_pois()) + " POIs, parameters expect " +
                              std::to_string(shape.num_users) + " and " + std::to_string(shape.num_pois));
    }
    r.split = data::chronological_split(r.dataset, {}, tc.split_mode);
    r.k = tc.k;
    return r;
}

int cmd_evaluate(const std::string& params, const std::string& checkins, const std::string& relations, bool markov,
                 std::ostream& out) {
    const Restored r = restore(params, checkins, relations);
    if (markov) {
        std::vector<data::CheckinEvent> history = r.split.train;
        history.insert(history.end(), r.split.validation.begin(), r.split.validation.end());
        const train::Metrics m = train::markov_baseline(history, r.split.test, r.dataset.num_pois(), r.k);
        out << "recall@" << r.k << "=" << metric(m.recall) << "\n";
        out << "mrr@" << r.k << "=" << metric(m.mrr) << "\n";
        out << "baseline=markov\n";
        return kOk;
    }
    train::MetricsReport report;
    report.k = r.k;
    report.ablation = r.loaded.model.ablation;
    report.seeds = {static_cast<std::uint64_t>(r.loaded.settings.get_int("seed", 0))};
    report.per_seed = {train::evaluate_split(r.loaded.model, r.dataset, r.split, r.k)};
    out << report.key_value_block();
    return kOk;
}

int cmd_recommend(const std::string& params, const std::string& checkins, const std::string& relations,
                  std::int64_t user, std::optional<std::size_t> k, std::ostream& out) {
    const Restored r = restore(params, checkins, relations);
    if (user < 0 || static_cast<std::size_t>(user) >= r.dataset.num_users) {
        throw LookupError("unknown user " + std::to_string(user));
    }
    const auto& model = r.loaded.model;
    const temporal::DynamicState state = train::final_state(model, r.dataset, r.split.train);
    const ad::Tensor scores = train::model_scores(model, state, static_cast<data::UserId>(user));
    const auto top = train::top_k(scores.values(), k.value_or(r.k));
    out << "rank,poi_id,score\n";
    for (std::size_t i = 0; i < top.size(); ++i) out << i + 1 << "," << top[i].poi << "," << num(top[i].score) << "\n";
    return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Relation-aware next-POI recommendation: data generation, training and inference", "memo"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    auto* gen = app.add_subcommand("generate", "write a synthetic check-in dataset");
    Layered gen_layers;
    gen_layers.flags.reserve(8);
    gen_layers.add_to(*gen);
    std::string gen_out;
    gen->add_option("-o,--out-dir", gen_out, "output directory (default: config output_dir or .)");
    gen_layers.flag(*gen, "--seed", "seed", "random seed");
    gen_layers.flag(*gen, "--num-users", "num_users", "number of users");
    gen_layers.flag(*gen, "--num-pois", "num_pois", "number of venues");
    gen_layers.flag(*gen, "--lambda", "lambda", "weight of related users' preferences");

    auto* inf = app.add_subcommand("infer-relations", "infer family and colleague ties from check-ins");
    std::string inf_checkins, inf_out;
    infer::InferOptions inf_opts;
    inf->add_option("--checkins", inf_checkins, "check-ins CSV")->required();
    inf->add_option("-o,--out", inf_out, "relations CSV to write")->required();
    inf->add_option("--cluster-radius", inf_opts.cluster_radius_m, "stop-point clustering radius in meters")
        ->check(CLI::PositiveNumber);
    inf->add_option("--colocation-radius", inf_opts.colocation_radius_m, "anchor co-location radius in meters")
        ->check(CLI::NonNegativeNumber);

    auto* tr = app.add_subcommand("train", "train a model and report test metrics");
    Layered tr_layers;
    tr_layers.flags.reserve(16);
    tr_layers.add_to(*tr);
    tr_layers.flag(*tr, "--checkins", "checkins", "check-ins CSV");
    tr_layers.flag(*tr, "--relations", "relations", "relations CSV");
    tr_layers.flag(*tr, "-o,--out-dir", "output_dir", "directory for manifest, parameters and metrics");
    tr_layers.flag(*tr, "--seed", "seed", "random seed");
    tr_layers.flag(*tr, "--epochs", "epochs", "training epochs");
    tr_layers.flag(*tr, "--d", "d", "embedding dimension");
    tr_layers.flag(*tr, "--lr", "lr", "Adam learning rate");
    tr_layers.flag(*tr, "--ablation", "ablation", "full, NG, NA, NR or NTS");
    tr_layers.flag(*tr, "--k", "k", "cutoff for Recall@K and MRR@K");
    tr_layers.flag(*tr, "--theta-t", "theta_t_seconds", "time-interval threshold in seconds");
    tr_layers.flag(*tr, "--theta-d", "theta_d_meters", "distance-interval threshold in meters");
    tr_layers.flag(*tr, "--runs", "runs", "number of consecutive seeds to train and aggregate");

    auto* ev = app.add_subcommand("evaluate", "recompute test metrics from saved parameters");
    std::string ev_params, ev_checkins, ev_relations;
    bool ev_markov = false;
    ev->add_option("-p,--params", ev_params, "parameter file written by train")->required();
    ev->add_option("--checkins", ev_checkins, "override the check-ins CSV");
    ev->add_option("--relations", ev_relations, "override the relations CSV");
    ev->add_flag("--markov", ev_markov, "report the first-order Markov baseline instead");

    auto* rec = app.add_subcommand("recommend", "top-K POIs for one user after the full history");
    std::string rec_params, rec_checkins, rec_relations;
    std::int64_t rec_user = 0;
    std::optional<std::size_t> rec_k;
    rec->add_option("-p,--params", rec_params, "parameter file written by train")->required();
    rec->add_option("-u,--user", rec_user, "user id")->required();
    rec->add_option("-k,--k", rec_k, "list length (clamped to the POI count)")->check(CLI::PositiveNumber);
    rec->add_option("--checkins", rec_checkins, "override the check-ins CSV");
    rec->add_option("--relations", rec_relations, "override the relations CSV");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::Success& e) {
        out << (dynamic_cast<const CLI::CallForVersion*>(&e) ? std::string(kVersion) + "\n" : app.help());
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "memo: " << e.what() << "\n";
        return kUsage;
    }

    try {
        if (gen->parsed()) return cmd_generate(gen_layers, gen_out, out);
        if (inf->parsed()) return cmd_infer(inf_checkins, inf_out, inf_opts, out);
        if (tr->parsed()) return cmd_train(tr_layers, out, err);
        if (ev->parsed()) return cmd_evaluate(ev_params, ev_checkins, ev_relations, ev_markov, out);
        if (rec->parsed()) return cmd_recommend(rec_params, rec_checkins, rec_relations, rec_user, rec_k, out);
    } catch (const ConfigError& e) {
        err << "memo: config error: " << e.what() << "\n";
        return kUsage;
    } catch (const TrainingError& e) {
        err << "memo: training diverged: " << e.what() << "\n";
        return kNumeric;
    } catch (const NumericError& e) {
        err << "memo: numeric failure: " << e.what() << "\n";
        return kNumeric;
    } catch (const std::exception& e) {
        err << "memo: " << e.what() << "\n";
        return kData;
    }
    return kUsage;
}

}  // namespace memo::cli
