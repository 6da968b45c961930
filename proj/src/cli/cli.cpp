#include "initfeat/cli.hpp"

#include "initfeat/consistency.hpp"
#include "initfeat/evalstats.hpp"
#include "initfeat/influence.hpp"
#include "initfeat/intervene.hpp"
#include "initfeat/kernels.hpp"
#include "initfeat/parallel.hpp"
#include "initfeat/recall.hpp"
#include "initfeat/report.hpp"
#include "initfeat/selection.hpp"
#include "initfeat/synth.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <iostream>
#include <set>

#ifndef INITFEAT_VERSION
#define INITFEAT_VERSION "0.0.0"
#endif

namespace initfeat {

namespace fs = std::filesystem;

namespace {

struct Config {
    std::string dataset;
    std::string sae;
    std::string out = "out";
    std::vector<int> layers;
    unsigned threads = 0;
    std::string simd = "auto";
    std::string log_level = "info";

    // recall / influence / consistency
    double tau_freq = 0.6;
    std::string positions = "src_last,tgt_lang,input_last";
    std::string alpha = "max+1.0";
    std::size_t verify_contexts = 8;
    double tau_cons = 0.95;
    double tau_align = 0.95;
    bool no_group_gate = false;
    std::string recall_report;
    std::string influence;
    std::string final_features;

    // intervention
    double coefficient = 2.0;
    std::string patch_mode = "delta";

    // selection
    std::string aggregator = "mean";
    std::string scores;
    std::string strategy = "S3";
    std::string budget = "0.2";
    std::vector<std::string> strategies{"S0", "S1", "S2", "S3"};
    std::vector<double> fractions{0.2, 0.5, 0.8};
    double quality_gate = 0.5;
    std::uint64_t seed = 0;

    // evalstats
    std::string outputs;
    std::vector<std::string> tokens;
    std::size_t window = 30;
    bool full_text = false;
    bool all_outputs = false;
    std::string judge_url;
    std::string judge_model = "judge";
    std::string api_key_env = "INITFEAT_JUDGE_API_KEY";
    std::string replay;
    std::string record;
    std::size_t in_flight = 4;

    // synth
    std::string fixture = "acceptance";
    std::uint64_t synth_seed = 0;
};

ojson config_json(const Config& c, const std::string& sub) {
    ojson j;
    j["subcommand"] = sub;
    j["dataset"] = c.dataset;
    j["sae"] = c.sae;
    j["out"] = c.out;
    j["layers"] = c.layers;
    j["tau_freq"] = c.tau_freq;
    j["positions"] = c.positions;
    j["alpha"] = c.alpha;
    j["verify_contexts"] = c.verify_contexts;
    j["tau_cons"] = c.tau_cons;
    j["tau_align"] = c.tau_align;
    j["group_gate"] = !c.no_group_gate;
    j["recall_report"] = c.recall_report;
    j["influence"] = c.influence;
    j["final_features"] = c.final_features;
    j["coefficient"] = c.coefficient;
    j["patch_mode"] = c.patch_mode;
    j["aggregator"] = c.aggregator;
    j["scores"] = c.scores;
    j["strategy"] = c.strategy;
    j["budget"] = c.budget;
    j["strategies"] = c.strategies;
    j["fractions"] = c.fractions;
    j["quality_gate"] = c.quality_gate;
    j["seed"] = c.seed;
    j["outputs"] = c.outputs;
    j["tokens"] = c.tokens;
    j["window"] = c.window;
    j["full_text"] = c.full_text;
    j["all_outputs"] = c.all_outputs;
    j["judge_url"] = c.judge_url;
    j["judge_model"] = c.judge_model;
    j["replay"] = c.replay;
    j["record"] = c.record;
    j["fixture"] = c.fixture;
    j["synth_seed"] = c.synth_seed;
    return j;
}

std::string fnv1a_hex(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return fmt::format("{:016x}", h);
}

AlphaPolicy parse_alpha(const std::string& s) {
    auto number = [&](std::string_view v) {
        try {
            std::size_t used = 0;
            const double x = std::stod(std::string(v), &used);
            if (used != v.size() || !std::isfinite(x)) throw std::invalid_argument("");
            return x;
        } catch (const std::exception&) {
            throw UsageError(fmt::format("bad alpha policy '{}' (max+<margin> or fixed:<value>)", s));
        }
    };
    AlphaPolicy p;
    for (std::string_view prefix : {"max+", "max_activation+"}) {
        if (s.rfind(prefix, 0) == 0) {
            p.kind = AlphaPolicy::Kind::max_plus_margin;
            p.value = number(std::string_view(s).substr(prefix.size()));
            return p;
        }
    }
    if (s.rfind("fixed:", 0) == 0) {
        p.kind = AlphaPolicy::Kind::fixed;
        p.value = number(std::string_view(s).substr(6));
        return p;
    }
    throw UsageError(fmt::format("bad alpha policy '{}' (max+<margin> or fixed:<value>)", s));
}

PositionMask parse_positions(const std::string& s) {
    PositionMask m{{false, false, false}};
    std::size_t pos = 0;
    while (pos <= s.size()) {
        const std::size_t comma = std::min(s.find(',', pos), s.size());
        const std::string name = s.substr(pos, comma - pos);
        bool found = false;
        for (std::size_t i = 0; i < kNumPositions; ++i)
            if (name == kPositionNames[i]) m.on[i] = found = true;
        if (!found) throw UsageError(fmt::format("unknown position '{}'", name));
        pos = comma + 1;
    }
    return m;
}

void check_threshold(const char* name, double v) {
    if (!(v > 0.0 && v <= 1.0)) throw UsageError(fmt::format("{} must be in (0, 1], got {}", name, v));
}

class Run {
public:
    Run(const Config& c, std::string sub) : cfg(c), sub_(std::move(sub)), start_(std::chrono::steady_clock::now()) {}

    const Config& cfg;

    fs::path out_dir() const { return cfg.out; }
    fs::path in_or_out(const std::string& given, const char* default_name) const {
        return given.empty() ? out_dir() / default_name : fs::path(given);
    }

    void ensure_out() const {
        std::error_code ec;
        fs::create_directories(out_dir(), ec);
        if (ec) throw DataError(fmt::format("cannot create output directory '{}': {}", cfg.out, ec.message()));
    }

    void input(const fs::path& p) { inputs_.push_back(p.string()); }
    void output(const fs::path& p) { outputs_.push_back(p.string()); }

    void finish() const {
        const ojson conf = config_json(cfg, sub_);
        ojson m;
        m["tool"] = "initfeat";
        m["version"] = INITFEAT_VERSION;
        m["subcommand"] = sub_;
        m["config"] = conf;
        m["config_hash"] = fnv1a_hex(conf.dump());
        m["inputs"] = inputs_;
        m["outputs"] = outputs_;
        m["threads"] = resolve_threads(cfg.threads);
        m["simd"] = kernels::to_string(kernels::active().level);
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        m["wall_time_s"] = sig9(secs);
        write_json_file(out_dir() / "run_manifest.json", m);
    }

private:
    std::string sub_;
    std::chrono::steady_clock::time_point start_;
    std::vector<std::string> inputs_, outputs_;
};

void require_path(const std::string& v, const char* flag) {
    if (v.empty()) throw UsageError(fmt::format("{} is required", flag));
}

ActivationDataset load_dataset(Run& run) {
    require_path(run.cfg.dataset, "--dataset");
    run.input(run.cfg.dataset);
    DatasetLoadOptions opts;
    opts.only_layers = run.cfg.layers;
    return load_activation_dataset(run.cfg.dataset, opts);
}

std::vector<int> analysis_layers(const Run& run, const ActivationDataset& ds) {
    return run.cfg.layers.empty() ? ds.layers() : run.cfg.layers;
}

SaeParams load_layer_sae(Run& run, int layer) {
    require_path(run.cfg.sae, "--sae");
    const fs::path p = sae_file(run.cfg.sae, layer);
    if (!fs::exists(p)) throw DataError(fmt::format("no SAE weights for layer {}: '{}' does not exist", layer, p.string()));
    run.input(p);
    return load_sae(p, layer);
}

// ---------------------------------------------------------------------------
// Stages

RecallReport stage_recall(Run& run, const ActivationDataset& ds) {
    check_threshold("--tau-freq", run.cfg.tau_freq);
    RecallOptions opts;
    opts.threads = run.cfg.threads;
    opts.positions = parse_positions(run.cfg.positions);
    RecallReport r;
    r.tau_freq = run.cfg.tau_freq;
    r.num_samples = ds.num_samples();
    for (int layer : analysis_layers(run, ds)) {
        const SaeParams p = load_layer_sae(run, layer);
        r.layers.push_back(recall_layer(ds, p, run.cfg.tau_freq, opts));
        spdlog::info("layer {}: {} features recalled", layer, r.layers.back().recalled.size());
    }
    const fs::path out = run.out_dir() / "recall_report.json";
    write_json_file(out, to_json(r));
    run.output(out);
    return r;
}

std::vector<CanonicalInfluence> stage_influence(Run& run, const ActivationDataset& ds, const RecallReport& r) {
    const AlphaPolicy policy = parse_alpha(run.cfg.alpha);
    InfluenceOptions opts;
    opts.alpha = policy;
    opts.threads = run.cfg.threads;
    opts.verify_contexts = run.cfg.verify_contexts;
    std::vector<CanonicalInfluence> table;
    for (const auto& lr : r.layers) {
        if (lr.recalled.empty()) continue;
        const SaeParams p = load_layer_sae(run, lr.layer);
        auto part = canonical_influences(p, ds, lr.recalled, opts);
        table.insert(table.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
    }
    if (table.empty()) spdlog::warn("no recalled features; influence table is empty");
    const fs::path bin = run.out_dir() / "influence_vectors.bin";
    if (!table.empty()) {
        save_influence_table(table, policy, bin);
        run.output(bin);
    }
    const fs::path rep = run.out_dir() / "influence_report.json";
    write_json_file(rep, to_json(table, policy));
    run.output(rep);
    return table;
}

FinalFeatureSet stage_consistency(Run& run, const std::vector<CanonicalInfluence>& table) {
    check_threshold("--tau-cons", run.cfg.tau_cons);
    check_threshold("--tau-align", run.cfg.tau_align);
    FilterOptions opts;
    opts.tau_cons = run.cfg.tau_cons;
    opts.tau_align = run.cfg.tau_align;
    opts.require_group_pass = !run.cfg.no_group_gate;
    opts.threads = run.cfg.threads;
    std::vector<InfluenceDirection> dirs;
    for (const auto& ci : table) dirs.push_back({ci.feature, ci.direction});
    const FilterResult res = filter_features(dirs, opts);
    const fs::path rep = run.out_dir() / "consistency_report.json";
    const fs::path fin = run.out_dir() / "final_features.json";
    write_json_file(rep, to_json(res.report));
    write_json_file(fin, to_json(res.final_set));
    run.output(rep);
    run.output(fin);
    spdlog::info("{} final features", res.final_set.features.size());
    return res.final_set;
}

FinalFeatureSet load_final(Run& run) {
    const fs::path p = run.in_or_out(run.cfg.final_features, "final_features.json");
    run.input(p);
    return final_set_from_json(read_json_file(p));
}

std::vector<CanonicalInfluence> load_influence(Run& run) {
    const fs::path p = run.in_or_out(run.cfg.influence, "influence_vectors.bin");
    run.input(p);
    return load_influence_table(p);
}

// ---------------------------------------------------------------------------
// Subcommands

void cmd_recall(Run& run) {
    const auto ds = load_dataset(run);
    run.ensure_out();
    stage_recall(run, ds);
}

void cmd_influence(Run& run) {
    const auto ds = load_dataset(run);
    const fs::path rp = run.in_or_out(run.cfg.recall_report, "recall_report.json");
    run.input(rp);
    const RecallReport r = recall_report_from_json(read_json_file(rp));
    run.ensure_out();
    stage_influence(run, ds, r);
}

void cmd_consistency(Run& run) {
    const auto table = load_influence(run);
    run.ensure_out();
    stage_consistency(run, table);
}

void cmd_pipeline(Run& run) {
    const auto ds = load_dataset(run);
    run.ensure_out();
    const RecallReport r = stage_recall(run, ds);
    const auto table = stage_influence(run, ds, r);
    stage_consistency(run, table);
}

void cmd_steer_export(Run& run) {
    const FinalFeatureSet fin = load_final(run);
    const auto table = load_influence(run);
    run.ensure_out();
    const SteeringExport s = build_steering(fin, table, run.cfg.coefficient, parse_patch_mode(run.cfg.patch_mode));
    run.output(write_steering(s, run.out_dir()));
    run.output(run.out_dir() / "steering_meta.json");
}

void cmd_score(Run& run) {
    const auto ds = load_dataset(run);
    const FinalFeatureSet fin = load_final(run);
    std::map<int, SaeParams> saes;
    for (const auto& f : fin.features)
        if (!saes.count(f.feature.layer)) saes.emplace(f.feature.layer, load_layer_sae(run, f.feature.layer));
    run.ensure_out();
    const auto scores =
        mechanistic_scores(ds, saes, fin, parse_aggregator(run.cfg.aggregator), run.cfg.threads);
    const fs::path out = run.out_dir() / "mech_scores.jsonl";
    write_mech_scores_jsonl(ds.samples(), scores, out);
    run.output(out);
}

std::vector<PoolEntry> load_pool(Run& run) {
    fs::path samples;
    if (!run.cfg.outputs.empty())
        samples = run.cfg.outputs;
    else {
        require_path(run.cfg.dataset, "--dataset or --outputs");
        samples = fs::path(run.cfg.dataset) / "samples.jsonl";
    }
    if (!fs::exists(samples)) throw DataError(fmt::format("samples file '{}' does not exist", samples.string()));
    run.input(samples);
    std::map<std::string, double> scores;
    const fs::path sp = run.in_or_out(run.cfg.scores, "mech_scores.jsonl");
    if (fs::exists(sp)) {
        scores = read_mech_scores_jsonl(sp);
        run.input(sp);
    } else if (!run.cfg.scores.empty()) {
        throw DataError(fmt::format("mechanistic scores '{}' do not exist", sp.string()));
    }
    return make_pool(read_samples_jsonl(samples), scores);
}

SelectionOptions selection_options(const Config& c) {
    check_threshold("--quality-gate", c.quality_gate);
    SelectionOptions o;
    o.quality_gate = c.quality_gate;
    o.seed = c.seed;
    return o;
}

void cmd_select(Run& run) {
    const auto pool = load_pool(run);
    run.ensure_out();
    const SelectionLedger l =
        select(pool, parse_strategy(run.cfg.strategy), Budget::parse(run.cfg.budget), selection_options(run.cfg));
    const fs::path out = selection_file(run.out_dir(), l);
    write_selection_jsonl(l, out);
    run.output(out);
}

void cmd_sweep(Run& run) {
    const auto pool = load_pool(run);
    std::vector<Strategy> strategies;
    for (const auto& s : run.cfg.strategies) strategies.push_back(parse_strategy(s));
    for (double f : run.cfg.fractions) Budget::of_fraction(f);
    run.ensure_out();
    for (const auto& l : budget_sweep(pool, strategies, run.cfg.fractions, selection_options(run.cfg))) {
        const fs::path out = selection_file(run.out_dir(), l);
        write_selection_jsonl(l, out);
        run.output(out);
    }
}

std::vector<SampleMeta> load_outputs(Run& run) {
    require_path(run.cfg.outputs, "--outputs");
    run.input(run.cfg.outputs);
    if (!fs::exists(run.cfg.outputs))
        throw DataError(fmt::format("outputs file '{}' does not exist", run.cfg.outputs));
    return read_samples_jsonl(run.cfg.outputs);
}

void cmd_framing(Run& run) {
    const auto samples = load_outputs(run);
    if (run.cfg.tokens.empty()) throw UsageError("--tokens is required");
    FramingOptions fo;
    fo.window = run.cfg.window;
    fo.full_text = run.cfg.full_text;
    ojson rep;
    rep["window"] = fo.window;
    rep["match"] = fo.full_text ? "full_text" : "prefix";
    rep["normalization"] = "casefold ascii+cyrillic, collapse whitespace";
    ojson langs = ojson::array();
    for (const auto& tp : run.cfg.tokens) {
        run.input(tp);
        const FramingTokenList list = load_framing_tokens(tp);
        std::vector<std::string> outputs;
        for (const auto& s : samples) {
            if (!s.output_text) continue;
            if (!run.cfg.all_outputs && primary_language(s.target_lang) != primary_language(list.language)) continue;
            outputs.push_back(*s.output_text);
        }
        if (outputs.empty())
            throw DataError(fmt::format("no outputs with target language '{}' in '{}'", list.language,
                                        run.cfg.outputs));
        ojson e;
        e["language"] = list.language;
        e["tokens"] = list.tokens.size();
        e["rate"] = to_json(framing_rate(outputs, list, fo));
        langs.push_back(std::move(e));
    }
    rep["languages"] = std::move(langs);
    run.ensure_out();
    const fs::path out = run.out_dir() / "framing_report.json";
    write_json_file(out, rep);
    run.output(out);
}

void cmd_judge(Run& run) {
    const auto samples = load_outputs(run);
    JudgeOptions jo;
    jo.model = run.cfg.judge_model;
    jo.in_flight = std::max<std::size_t>(1, run.cfg.in_flight);
    std::unique_ptr<JudgeTransport> base;
    if (!run.cfg.replay.empty()) {
        run.input(run.cfg.replay);
        base = std::make_unique<ReplayTransport>(run.cfg.replay);
    } else {
        if (run.cfg.judge_url.empty()) throw UsageError("--judge-url or --replay is required");
        base = std::make_unique<HttpTransport>(run.cfg.judge_url, run.cfg.api_key_env);
    }
    run.ensure_out();
    std::unique_ptr<RecordingTransport> rec;
    JudgeTransport* t = base.get();
    if (!run.cfg.record.empty()) {
        rec = std::make_unique<RecordingTransport>(*base, run.cfg.record);
        t = rec.get();
        run.output(run.cfg.record);
    }
    const auto verdicts = judge_samples(*t, samples, jo);
    std::string lines;
    for (const auto& v : verdicts) lines += to_json(v).dump() + "\n";
    const fs::path vp = run.out_dir() / "verdicts.jsonl";
    write_text_file(vp, lines);
    run.output(vp);
    ojson rep = to_json(hallucination_rate(verdicts));
    rep["judge_model"] = jo.model;
    rep["empty_output_rule"] = "short-circuit: counted as hallucination without judge calls";
    const fs::path rp = run.out_dir() / "hallucination_report.json";
    write_json_file(rp, rep);
    run.output(rp);
}

void cmd_synth(Run& run) {
    if (run.cfg.fixture != "acceptance") throw UsageError(fmt::format("unknown synth fixture '{}'", run.cfg.fixture));
    SynthConfig sc = acceptance_fixture_config();
    if (run.cfg.synth_seed != 0) sc.seed = run.cfg.synth_seed;
    const SynthResult r = generate(sc);
    run.ensure_out();
    write_synth(r, run.out_dir());
    run.output(run.out_dir() / "dataset");
    run.output(run.out_dir() / "sae");
    run.output(run.out_dir() / "ground_truth.json");
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data());
}

int run_cli(int argc, const char* const* argv) {
    Config cfg;
    CLI::App app{"Identify, validate and apply task-initiation SAE features", "initfeat"};
    app.set_version_flag("--version", INITFEAT_VERSION);
    app.set_config("--config", "", "key=value config file; flags override it");
    app.require_subcommand(1);
    app.fallthrough();

    app.add_option("--dataset", cfg.dataset, "Activation dataset directory");
    app.add_option("--sae", cfg.sae, "Directory with sae_layer_<l>.bin files");
    app.add_option("--out", cfg.out, "Output directory")->capture_default_str();
    app.add_option("--layers", cfg.layers, "Restrict to these layers")->delimiter(',');
    app.add_option("--threads", cfg.threads, "Worker threads (0 = all cores)")->capture_default_str();
    app.add_option("--simd", cfg.simd, "Kernel level: auto|scalar|avx2|neon")->capture_default_str();
    app.add_option("--log-level", cfg.log_level, "trace|debug|info|warn|error|off")->capture_default_str();

    app.add_option("--tau-freq", cfg.tau_freq, "Recall frequency threshold")->capture_default_str();
    app.add_option("--positions", cfg.positions, "Positions forming the recall union")->capture_default_str();
    app.add_option("--alpha", cfg.alpha, "Forced activation: max+<margin> or fixed:<value>")->capture_default_str();
    app.add_option("--verify-contexts", cfg.verify_contexts, "Contexts re-checked with the full two-decode form")
        ->capture_default_str();
    app.add_option("--tau-cons", cfg.tau_cons, "Group consistency threshold")->capture_default_str();
    app.add_option("--tau-align", cfg.tau_align, "PC1 alignment threshold")->capture_default_str();
    app.add_flag("--no-group-gate", cfg.no_group_gate, "Keep aligned features even if their group fails");
    app.add_option("--recall-report", cfg.recall_report, "Default: <out>/recall_report.json");
    app.add_option("--influence", cfg.influence, "Default: <out>/influence_vectors.bin");
    app.add_option("--final", cfg.final_features, "Default: <out>/final_features.json");

    app.add_option("--coeff", cfg.coefficient, "Intervention coefficient (0 ablate, 2 amplify)")->capture_default_str();
    app.add_option("--patch-mode", cfg.patch_mode, "delta|replace")->capture_default_str();

    app.add_option("--aggregator", cfg.aggregator, "Mechanistic score aggregator: mean|sum|min")->capture_default_str();
    app.add_option("--scores", cfg.scores, "Default: <out>/mech_scores.jsonl");
    app.add_option("--strategy", cfg.strategy, "S0|S1|S2|S3")->capture_default_str();
    app.add_option("--budget", cfg.budget, "Sample count or fraction")->capture_default_str();
    app.add_option("--strategies", cfg.strategies, "Strategies for sweep")->delimiter(',')->capture_default_str();
    app.add_option("--fractions", cfg.fractions, "Budget fractions for sweep")->delimiter(',')->capture_default_str();
    app.add_option("--quality-gate", cfg.quality_gate, "Top quality fraction kept for S2/S3")->capture_default_str();
    app.add_option("--seed", cfg.seed, "Seed for S0")->capture_default_str();

    app.add_option("--outputs", cfg.outputs, "JSONL of samples with output_text");
    app.add_option("--tokens", cfg.tokens, "Framing token list JSON files")->delimiter(',');
    app.add_option("--window", cfg.window, "Prefix window in characters")->capture_default_str();
    app.add_flag("--full-text", cfg.full_text, "Match tokens anywhere in the output");
    app.add_flag("--all-outputs", cfg.all_outputs, "Do not filter outputs by target language");
    app.add_option("--judge-url", cfg.judge_url, "Chat-completions endpoint URL");
    app.add_option("--judge-model", cfg.judge_model, "Judge model name")->capture_default_str();
    app.add_option("--api-key-env", cfg.api_key_env, "Environment variable holding the judge API key")
        ->capture_default_str();
    app.add_option("--replay", cfg.replay, "Serve judge replies from this replay file");
    app.add_option("--record", cfg.record, "Append judge replies to this replay file");
    app.add_option("--in-flight", cfg.in_flight, "Concurrent judge samples")->capture_default_str();

    app.add_option("--fixture", cfg.fixture, "Synthetic fixture name")->capture_default_str();
    app.add_option("--synth-seed", cfg.synth_seed, "Override the fixture seed");

    using Handler = void (*)(Run&);
    const std::vector<std::tuple<std::string, std::string, Handler>> commands{
        {"recall", "Stage 1: frequently active features", cmd_recall},
        {"influence", "Stage 2: canonical influence directions of recalled features", cmd_influence},
        {"consistency", "Stage 3: PCA consistency filter", cmd_consistency},
        {"pipeline", "recall, influence and consistency in one run", cmd_pipeline},
        {"steer-export", "Export steering directions for the final set", cmd_steer_export},
        {"score", "Mechanistic score per sample", cmd_score},
        {"select", "Select a fine-tuning subset", cmd_select},
        {"sweep", "Selections over several budgets and strategies", cmd_sweep},
        {"framing", "Framing-token emission rates", cmd_framing},
        {"judge", "LLM-as-judge hallucination rate", cmd_judge},
        {"synth", "Write a synthetic dataset with planted ground truth", cmd_synth},
    };
    for (const auto& [name, help, _] : commands) app.add_subcommand(name, help);

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        if (app.get_subcommands().empty()) std::cerr << "\n" << app.help();
        return 1;
    }

    auto logger = spdlog::get("initfeat");
    if (!logger) logger = spdlog::stderr_color_mt("initfeat");
    spdlog::set_default_logger(logger);

    try {
        spdlog::set_level(spdlog::level::from_str(cfg.log_level));
        if (cfg.simd != "auto") kernels::set_active_level(kernels::parse_simd_level(cfg.simd));
        for (const auto& [name, help, handler] : commands) {
            if (!app.got_subcommand(name)) continue;
            Run run(cfg, name);
            handler(run);
            run.finish();
        }
        return 0;
    } catch (const UsageError& e) {
        std::cerr << "initfeat: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "initfeat: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace initfeat
