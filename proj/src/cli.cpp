#include "hagil/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <CLI11.hpp>
#include <json.hpp>

#include "hagil/features.hpp"
#include "hagil/gesture_data.hpp"
#include "hagil/harness.hpp"
#include "hagil/io_util.hpp"
#include "hagil/strategies.hpp"

namespace hagil {
namespace {

namespace fs = std::filesystem;

// Bad flag values detected after parsing; reported like CLI11 parse errors.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

template <class F>
auto convert_flag(const std::string& flag, const std::string& value, F&& f) {
    try {
        return f(value);
    } catch (const std::invalid_argument& e) {
        throw UsageError(flag + ": " + e.what());
    }
}

std::uint64_t parse_seed(const std::string& source, const std::string& text) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
        v = std::stoull(text, &used, 10);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != text.size() || text.front() == '-') {
        throw UsageError(source + ": not a non-negative integer: '" + text + "'");
    }
    return v;
}

std::optional<std::uint64_t> env_seed() {
    const char* s = std::getenv("HAGIL_SEED");
    if (!s || !*s) return std::nullopt;
    return parse_seed("HAGIL_SEED", s);
}

void refuse_overwrite(const std::vector<fs::path>& paths, bool force) {
    if (force) return;
    for (const auto& p : paths) {
        if (fs::exists(p)) throw std::runtime_error(p.string() + " exists (use --force to overwrite)");
    }
}

std::vector<fs::path> to_paths(const std::vector<std::string>& v) { return {v.begin(), v.end()}; }

// Data source flags shared by run, bench and times.
struct DataFlags {
    std::vector<std::string> data;
    bool mirror_left = false;
    SynthConfig synth;
    std::uint64_t synth_seed = 0;
    std::string encoding = "combined";

    CLI::Option* synth_seed_opt = nullptr;
    CLI::Option* classes_opt = nullptr;
    CLI::Option* samples_opt = nullptr;
    CLI::Option* jitter_opt = nullptr;
    CLI::Option* subjects_opt = nullptr;
    CLI::Option* data_opt = nullptr;
    CLI::Option* mirror_opt = nullptr;
    CLI::Option* encoding_opt = nullptr;

    void add(CLI::App* app) {
        data_opt = app->add_option("--data", data, "Landmark JSON Lines file(s); synthetic data when absent");
        mirror_opt = app->add_flag("--mirror-left", mirror_left, "Mirror left hands to right (x -> 1 - x)");
        classes_opt = app->add_option("--synth-classes", synth.n_classes, "Synthetic classes")->capture_default_str();
        samples_opt =
            app->add_option("--synth-samples", synth.samples_per_class, "Synthetic samples per class")
                ->capture_default_str();
        jitter_opt = app->add_option("--synth-jitter", synth.jitter_std, "Synthetic jitter std")->capture_default_str();
        subjects_opt =
            app->add_option("--synth-subjects", synth.n_subjects, "Synthetic subjects")->capture_default_str();
        synth_seed_opt = app->add_option("--synth-seed", synth_seed, "Synthetic data seed (default: --seed)");
        encoding_opt = app->add_option("--encoding", encoding, "Feature encoding")->capture_default_str();
    }
};

struct SeedFlag {
    std::string text;
    CLI::Option* opt = nullptr;

    void add(CLI::App* app) { opt = app->add_option("--seed", text, "Base seed (fallback: HAGIL_SEED, then 0)"); }
    std::optional<std::uint64_t> given() const {
        if (opt->count() == 0) return std::nullopt;
        return parse_seed("--seed", text);
    }
    std::uint64_t resolve() const { return given().value_or(env_seed().value_or(0)); }
};

GestureDataset load_or_synth(const DataFlags& d, std::uint64_t seed) {
    if (!d.data.empty()) return load_datasets(to_paths(d.data), LoadOptions{d.mirror_left});
    SynthConfig cfg = d.synth;
    cfg.seed = d.synth_seed_opt->count() ? d.synth_seed : seed;
    cfg.validate();
    return synth_gestures(cfg);
}

// ---- synth ----

struct SynthCmd {
    SynthConfig cfg;
    SeedFlag seed;
    std::string out;
    bool force = false;

    void add(CLI::App* app) {
        app->add_option("--classes", cfg.n_classes, "Number of gesture classes")->capture_default_str();
        app->add_option("--samples", cfg.samples_per_class, "Samples per class")->capture_default_str();
        app->add_option("--jitter", cfg.jitter_std, "Landmark jitter std")->capture_default_str();
        app->add_option("--subjects", cfg.n_subjects, "Number of subjects")->capture_default_str();
        seed.add(app);
        app->add_option("--out", out, "Output landmark file")->required();
        app->add_flag("--force", force, "Overwrite existing output");
    }

    void run(std::ostream& os) {
        cfg.seed = seed.resolve();
        cfg.validate();
        refuse_overwrite({out}, force);
        const auto ds = synth_gestures(cfg);
        save_dataset(ds, out);
        os << "wrote " << ds.frames().size() << " frames (" << ds.classes().size() << " classes) to " << out << "\n";
    }
};

// ---- encode ----

struct EncodeCmd {
    std::vector<std::string> data;
    std::string encoding = "combined";
    std::string out;
    bool mirror_left = false;
    bool force = false;

    void add(CLI::App* app) {
        app->add_option("--data", data, "Landmark JSON Lines file(s)")->required();
        app->add_option("--encoding", encoding, "Feature encoding")->capture_default_str();
        app->add_option("--out", out, "Output CSV")->required();
        app->add_flag("--mirror-left", mirror_left, "Mirror left hands to right");
        app->add_flag("--force", force, "Overwrite existing output");
    }

    void run(std::ostream& os) {
        const Encoding e = convert_flag("--encoding", encoding, encoding_from_string);
        refuse_overwrite({out}, force);
        const auto ds = load_datasets(to_paths(data), LoadOptions{mirror_left});
        const std::size_t dim = encoding_dim(e);
        std::string text = "label,subject";
        for (std::size_t i = 0; i < dim; ++i) text += ",v" + std::to_string(i);
        text += "\n";
        std::vector<double> buf(dim);
        for (const auto& f : ds.frames()) {
            encode_into(f, e, buf.data());
            text += f.label + "," + f.subject;
            for (double v : buf) text += "," + format_exact(v);
            text += "\n";
        }
        write_file_atomic(out, text);
        os << "wrote " << ds.frames().size() << " rows of " << dim << " " << to_string(e) << " features to " << out
           << "\n";
    }
};

// ---- run ----

struct RunCmd {
    DataFlags data;
    SeedFlag seed;
    std::string scenario_file;
    std::string strategy;
    std::string selection;
    std::size_t m = 0, epochs_init = 0, epochs_inc = 0, runs = 0, n_init = 0, classes_per_task = 0, batch_size = 0;
    std::vector<std::size_t> hidden;
    double dropout = 0.0, lambda = 0.0;
    bool no_kdl = false, no_nem = false, joint_from_scratch = false, timings = false, force = false;
    std::size_t parallel = 1;
    std::string out;
    std::map<std::string, CLI::Option*> opts;

    void add(CLI::App* app) {
        app->add_option("--scenario", scenario_file, "Scenario JSON file (flags override its fields)");
        data.add(app);
        seed.add(app);
        opts["strategy"] = app->add_option("--strategy", strategy, "joint, finetune, lwf, icarl or il2m");
        opts["selection"] = app->add_option("--selection", selection, "Exemplar selection: herding or random");
        opts["m"] = app->add_option("--m", m, "Exemplars per class");
        opts["epochs_init"] = app->add_option("--epochs-init", epochs_init, "Epochs for the initial task");
        opts["epochs_inc"] = app->add_option("--epochs-inc", epochs_inc, "Epochs per incremental task");
        opts["runs"] = app->add_option("--runs", runs, "Number of runs");
        opts["n_init"] = app->add_option("--n-init", n_init, "Classes in the initial task");
        opts["classes_per_task"] = app->add_option("--classes-per-task", classes_per_task, "Classes per increment");
        opts["hidden"] = app->add_option("--hidden", hidden, "Hidden layer widths")->delimiter(',');
        opts["dropout"] = app->add_option("--dropout", dropout, "Dropout probability");
        opts["batch_size"] = app->add_option("--batch-size", batch_size, "Mini-batch size");
        opts["lambda"] = app->add_option("--lambda", lambda, "Distillation loss weight");
        app->add_flag("--no-kdl", no_kdl, "Disable distillation (iCaRL)");
        app->add_flag("--no-nem", no_nem, "Classify with softmax instead of nearest exemplar mean (iCaRL)");
        app->add_flag("--joint-from-scratch", joint_from_scratch, "Joint retrains a fresh model every task");
        app->add_option("--parallel", parallel, "Runs executed concurrently")->capture_default_str();
        app->add_flag("--timings", timings, "Fill the train_seconds column of runs.csv");
        app->add_option("--out", out, "Output directory")->required();
        app->add_flag("--force", force, "Overwrite existing outputs");
    }

    Scenario scenario() const {
        Scenario s;
        bool file_seed = false, file_synth_seed = false;
        if (!scenario_file.empty()) {
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(read_file(scenario_file));
            } catch (const nlohmann::json::exception& e) {
                throw std::runtime_error(scenario_file + ": " + e.what());
            }
            try {
                s = Scenario::from_json(j);
            } catch (const std::exception& e) {
                throw std::runtime_error(scenario_file + ": " + e.what());
            }
            file_seed = j.contains("seed");
            file_synth_seed = j.contains("synth") && j["synth"].is_object() && j["synth"].contains("seed");
        }
        auto given = [&](const char* k) { return opts.at(k)->count() > 0; };

        if (data.data_opt->count()) s.data = data.data;
        if (data.mirror_opt->count()) s.mirror_left = data.mirror_left;
        if (data.classes_opt->count()) s.synth.n_classes = data.synth.n_classes;
        if (data.samples_opt->count()) s.synth.samples_per_class = data.synth.samples_per_class;
        if (data.jitter_opt->count()) s.synth.jitter_std = data.synth.jitter_std;
        if (data.subjects_opt->count()) s.synth.n_subjects = data.synth.n_subjects;
        if (data.encoding_opt->count()) s.encoding = convert_flag("--encoding", data.encoding, encoding_from_string);
        if (given("strategy")) s.strategy = convert_flag("--strategy", strategy, strategy_from_string);
        if (given("selection")) s.selection = convert_flag("--selection", selection, selection_from_string);
        if (given("m")) s.m = m;
        if (given("epochs_init")) s.epochs_init = epochs_init;
        if (given("epochs_inc")) s.epochs_inc = epochs_inc;
        if (given("runs")) s.runs = runs;
        if (given("n_init")) s.n_init = n_init;
        if (given("classes_per_task")) s.classes_per_task = classes_per_task;
        if (given("hidden")) s.hidden = hidden;
        if (given("dropout")) s.dropout_p = dropout;
        if (given("batch_size")) s.batch_size = batch_size;
        if (given("lambda")) s.distill_weight = lambda;
        if (no_kdl) s.distillation = false;
        if (no_nem) s.nem = false;
        if (joint_from_scratch) s.joint_from_scratch = true;

        if (auto sd = seed.given()) {
            s.seed = *sd;
        } else if (!file_seed) {
            s.seed = env_seed().value_or(0);
        }
        if (data.synth_seed_opt->count()) {
            s.synth.seed = data.synth_seed;
        } else if (!file_synth_seed) {
            s.synth.seed = s.seed;
        }
        try {
            s.validate();
        } catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
        }
        return s;
    }

    void run(std::ostream& os) {
        if (parallel < 1) throw UsageError("--parallel: must be at least 1");
        const Scenario s = scenario();
        EmitOptions eo;
        eo.include_timings = timings;
        std::vector<fs::path> targets{fs::path(out) / "scenario.json"};
        for (const auto& n : metric_file_names(eo)) targets.push_back(fs::path(out) / n);
        refuse_overwrite(targets, force);

        const auto results = run_all(s, parallel);
        const Summary summary = aggregate(results);
        emit_metrics(results, summary, out, eo);
        write_file_atomic(fs::path(out) / "scenario.json", s.to_json().dump(2) + "\n");
        for (const auto& r : results) {
            for (const auto& w : r.warnings) os << "warning: run " << r.run << ": " << w << "\n";
        }
        os << to_string(s.strategy) << ": final average accuracy " << format_number(summary.final_mean) << " +/- "
           << format_number(summary.final_std) << " over " << summary.runs << " run(s); results in " << out << "\n";
    }
};

// ---- bench ----

struct Variant {
    std::string name;
    StrategyKind strategy;
    bool distillation = true;
    bool nem = true;
};

// "icarl-kdl-nem" style names: a strategy followed by ablation suffixes.
Variant parse_variant(const std::string& text) {
    Variant v;
    v.name = text;
    std::stringstream ss(text);
    std::string part;
    std::getline(ss, part, '-');
    v.strategy = strategy_from_string(part);
    while (std::getline(ss, part, '-')) {
        std::transform(part.begin(), part.end(), part.begin(), [](unsigned char c) { return std::tolower(c); });
        if (part == "kdl") {
            v.distillation = false;
        } else if (part == "nem") {
            v.nem = false;
        } else {
            throw std::invalid_argument("unknown ablation suffix '" + part + "' in '" + text + "'");
        }
    }
    if ((!v.distillation || !v.nem) && v.strategy != StrategyKind::ICaRL) {
        throw std::invalid_argument("ablation suffixes apply to icarl only: '" + text + "'");
    }
    return v;
}

struct BenchCmd {
    DataFlags data;
    SeedFlag seed;
    std::vector<std::string> strategies{"icarl", "icarl-kdl", "icarl-kdl-nem", "il2m", "lwf", "finetune", "joint"};
    std::vector<std::size_t> ms{5};
    std::vector<std::size_t> epochs_inc{15};
    std::size_t epochs_init = 50;
    std::size_t runs = 10;
    std::size_t parallel = 1;
    bool timings = false, force = false;
    std::string out;

    void add(CLI::App* app) {
        data.add(app);
        seed.add(app);
        app->add_option("--strategies", strategies, "Strategies, with optional -kdl/-nem suffixes for icarl")
            ->delimiter(',')
            ->capture_default_str();
        app->add_option("--m", ms, "Exemplars per class (list)")->delimiter(',')->capture_default_str();
        app->add_option("--epochs-inc", epochs_inc, "Incremental epochs (list)")->delimiter(',')->capture_default_str();
        app->add_option("--epochs-init", epochs_init, "Epochs for the initial task")->capture_default_str();
        app->add_option("--runs", runs, "Runs per configuration")->capture_default_str();
        app->add_option("--parallel", parallel, "Runs executed concurrently")->capture_default_str();
        app->add_flag("--timings", timings, "Fill the train_seconds column of runs.csv");
        app->add_option("--out", out, "Output directory")->required();
        app->add_flag("--force", force, "Overwrite existing outputs");
    }

    void run(std::ostream& os) {
        if (parallel < 1) throw UsageError("--parallel: must be at least 1");
        std::vector<Variant> variants;
        for (const auto& s : strategies) variants.push_back(convert_flag("--strategies", s, parse_variant));

        Scenario base;
        base.data = data.data;
        base.mirror_left = data.mirror_left;
        base.synth = data.synth;
        base.encoding = convert_flag("--encoding", data.encoding, encoding_from_string);
        base.epochs_init = epochs_init;
        base.runs = runs;
        base.seed = seed.resolve();
        base.synth.seed = data.synth_seed_opt->count() ? data.synth_seed : base.seed;

        struct Cell {
            Scenario scenario;
            std::string variant, dir;
        };
        std::vector<Cell> cells;
        for (const auto& v : variants) {
            const bool memory = uses_memory(v.strategy);
            for (std::size_t mi = 0; mi < (memory ? ms.size() : 1); ++mi) {
                for (std::size_t e : epochs_inc) {
                    Cell c{base, v.name, {}};
                    c.scenario.strategy = v.strategy;
                    c.scenario.distillation = v.distillation;
                    c.scenario.nem = v.nem;
                    c.scenario.m = ms[mi];
                    c.scenario.epochs_inc = e;
                    c.dir = v.name + (memory ? "_m" + std::to_string(ms[mi]) : std::string()) + "_e" +
                            std::to_string(e);
                    try {
                        c.scenario.validate();
                    } catch (const std::invalid_argument& err) {
                        throw UsageError(c.dir + ": " + err.what());
                    }
                    cells.push_back(std::move(c));
                }
            }
        }

        EmitOptions eo;
        eo.include_timings = timings;
        std::vector<fs::path> targets{fs::path(out) / "bench.csv"};
        for (const auto& c : cells) {
            for (const auto& n : metric_file_names(eo)) targets.push_back(fs::path(out) / c.dir / n);
        }
        refuse_overwrite(targets, force);

        std::string csv = "variant,strategy,m,epochs_inc,runs,final_mean,final_std\n";
        for (const auto& c : cells) {
            const auto results = run_all(c.scenario, parallel);
            const Summary summary = aggregate(results);
            emit_metrics(results, summary, fs::path(out) / c.dir, eo);
            const bool memory = uses_memory(c.scenario.strategy);
            csv += c.variant + "," + to_string(c.scenario.strategy) + "," +
                   (memory ? std::to_string(c.scenario.m) : std::string()) + "," +
                   std::to_string(c.scenario.epochs_inc) + "," + std::to_string(summary.runs) + "," +
                   format_number(summary.final_mean) + "," + format_number(summary.final_std) + "\n";
            os << std::left << std::setw(22) << c.dir << " " << format_number(summary.final_mean) << " +/- "
               << format_number(summary.final_std) << "\n";
        }
        fs::create_directories(out);
        write_file_atomic(fs::path(out) / "bench.csv", csv);
    }
};

// ---- times ----

struct TimesCmd {
    DataFlags data;
    SeedFlag seed;
    std::vector<std::string> strategies{"icarl", "joint"};
    std::size_t frames = 1000;
    TrainingTimeConfig cfg;
    std::string out;
    bool force = false;

    void add(CLI::App* app) {
        data.synth.n_classes = 28;
        data.synth.samples_per_class = 200;
        data.add(app);
        seed.add(app);
        app->add_option("--strategies", strategies, "Strategies whose increment is timed; the first is profiled")
            ->delimiter(',')
            ->capture_default_str();
        app->add_option("--frames", frames, "Frames used for the latency profile")->capture_default_str();
        app->add_option("--pretrain-epochs", cfg.pretrain_epochs, "Epochs on all classes but the last")
            ->capture_default_str();
        app->add_option("--epochs-inc", cfg.epochs_inc, "Epochs for the timed increment")->capture_default_str();
        app->add_option("--m", cfg.m, "Exemplars per class")->capture_default_str();
        app->add_option("--repeats", cfg.repeats, "Timed repetitions (median reported)")->capture_default_str();
        app->add_option("--out", out, "Output directory")->required();
        app->add_flag("--force", force, "Overwrite existing outputs");
    }

    void run(std::ostream& os) {
        std::vector<StrategyKind> kinds;
        for (const auto& s : strategies) kinds.push_back(convert_flag("--strategies", s, strategy_from_string));
        if (kinds.empty()) throw UsageError("--strategies: at least one strategy required");
        if (frames == 0) throw UsageError("--frames: must be positive");
        cfg.encoding = convert_flag("--encoding", data.encoding, encoding_from_string);
        cfg.seed = seed.resolve();
        const fs::path target = fs::path(out) / "times.json";
        refuse_overwrite({target}, force);

        const auto ds = load_or_synth(data, cfg.seed);
        TimeReport report;
        std::optional<Learner> profiled;
        for (std::size_t i = 0; i < kinds.size(); ++i) {
            if (i == 0) {
                Learner trained{LearnerConfig{}};
                report.training.push_back(time_increment(ds, kinds[i], cfg, {}, &trained));
                profiled.emplace(std::move(trained));
            } else {
                report.training.push_back(time_increment(ds, kinds[i], cfg));
            }
        }
        std::vector<HandFrame> sample;
        for (std::size_t i = 0; i < frames; ++i) sample.push_back(ds.frames()[i % ds.frames().size()]);
        report.stages = profile_inference(*profiled, sample);

        fs::create_directories(out);
        write_file_atomic(target, report.to_json().dump(2) + "\n");
        for (const auto& s : report.stages) {
            os << std::left << std::setw(10) << s.stage << " median " << format_number(s.median_ms) << " ms  p95 "
               << format_number(s.p95_ms) << " ms\n";
        }
        for (const auto& t : report.training) {
            os << std::left << std::setw(10) << t.label << " increment " << format_number(t.seconds) << " s over "
               << t.pool_size << " samples/epoch\n";
        }
    }
};

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Class-incremental hand-gesture learning", "hagil"};
    app.require_subcommand(1);
    app.fallthrough(false);

    SynthCmd synth;
    EncodeCmd encode;
    RunCmd run;
    BenchCmd bench;
    TimesCmd times;
    auto* synth_app = app.add_subcommand("synth", "Write a synthetic landmark dataset");
    auto* encode_app = app.add_subcommand("encode", "Encode landmark files to a feature CSV");
    auto* run_app = app.add_subcommand("run", "Run an incremental-learning scenario and write metrics");
    auto* bench_app = app.add_subcommand("bench", "Run a strategy x m x epochs grid");
    auto* times_app = app.add_subcommand("times", "Measure inference latency and increment training time");
    synth.add(synth_app);
    encode.add(encode_app);
    run.add(run_app);
    bench.add(bench_app);
    times.add(times_app);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        app.exit(e, out, err);
        return 0;
    } catch (const CLI::CallForAllHelp& e) {
        app.exit(e, out, err);
        return 0;
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return 2;
    }

    try {
        if (synth_app->parsed()) synth.run(out);
        else if (encode_app->parsed()) encode.run(out);
        else if (run_app->parsed()) run.run(out);
        else if (bench_app->parsed()) bench.run(out);
        else if (times_app->parsed()) times.run(out);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace hagil
