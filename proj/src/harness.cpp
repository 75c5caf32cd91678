#include "hagil/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "hagil/io_util.hpp"

namespace hagil {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double quantile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = static_cast<std::size_t>(std::ceil(pos));
    return v[lo] + (v[hi] - v[lo]) * (pos - static_cast<double>(lo));
}

}  // namespace

void Scenario::validate() const {
    if (n_init < 2) throw std::invalid_argument("n_init must be at least 2");
    if (classes_per_task < 1) throw std::invalid_argument("classes_per_task must be at least 1");
    if (runs < 1) throw std::invalid_argument("runs must be at least 1");
    if (m < 1) throw std::invalid_argument("m must be at least 1");
    if (batch_size < 2) throw std::invalid_argument("batch_size must be at least 2");
    if (data.empty()) synth.validate();
}

LearnerConfig Scenario::learner_config(std::uint64_t run_seed) const {
    LearnerConfig c;
    c.strategy = strategy;
    c.encoding = encoding;
    c.hidden = hidden;
    c.dropout_p = dropout_p;
    c.initial.epochs = epochs_init;
    c.incremental.epochs = epochs_inc;
    c.initial.batch_size = c.incremental.batch_size = batch_size;
    c.initial.distill_weight = c.incremental.distill_weight = distill_weight;
    c.exemplars_per_class = m;
    c.selection = selection;
    c.distillation = distillation;
    c.nem = nem;
    c.joint_from_scratch = joint_from_scratch;
    c.seed = run_seed;
    return c;
}

nlohmann::json Scenario::to_json() const {
    nlohmann::json j;
    j["data"] = data;
    j["synth"] = {{"n_classes", synth.n_classes},
                  {"samples_per_class", synth.samples_per_class},
                  {"jitter_std", synth.jitter_std},
                  {"n_subjects", synth.n_subjects},
                  {"seed", synth.seed}};
    if (split) {
        nlohmann::json s = nlohmann::json::object();
        for (const auto& [subject, role] : split->assignment) s[subject] = hagil::to_string(role);
        j["split"] = std::move(s);
    }
    j["mirror_left"] = mirror_left;
    j["encoding"] = hagil::to_string(encoding);
    j["strategy"] = hagil::to_string(strategy);
    j["distillation"] = distillation;
    j["nem"] = nem;
    j["joint_from_scratch"] = joint_from_scratch;
    j["selection"] = hagil::to_string(selection);
    j["n_init"] = n_init;
    j["classes_per_task"] = classes_per_task;
    j["epochs_init"] = epochs_init;
    j["epochs_inc"] = epochs_inc;
    j["m"] = m;
    j["runs"] = runs;
    j["seed"] = seed;
    j["hidden"] = hidden;
    j["dropout_p"] = dropout_p;
    j["batch_size"] = batch_size;
    j["distill_weight"] = distill_weight;
    return j;
}

Scenario Scenario::from_json(const nlohmann::json& j) { return from_json(j, Scenario{}); }

Scenario Scenario::from_json(const nlohmann::json& j, Scenario s) {
    static const std::vector<std::string> known = {
        "data",     "synth",  "split",       "mirror_left", "encoding", "strategy", "distillation",
        "nem",      "joint_from_scratch",    "selection",   "n_init",   "classes_per_task",
        "epochs_init", "epochs_inc",         "m",           "runs",     "seed",     "hidden",
        "dropout_p", "batch_size",           "distill_weight"};
    if (!j.is_object()) throw std::invalid_argument("scenario must be a JSON object");
    for (const auto& [key, _] : j.items()) {
        if (std::find(known.begin(), known.end(), key) == known.end()) {
            throw std::invalid_argument("unknown scenario field '" + key + "'");
        }
    }
    if (j.contains("data")) {
        s.data = j["data"].is_string() ? std::vector<std::string>{j["data"].get<std::string>()}
                                       : j["data"].get<std::vector<std::string>>();
    }
    if (j.contains("synth")) {
        const auto& sj = j["synth"];
        s.synth.n_classes = sj.value("n_classes", s.synth.n_classes);
        s.synth.samples_per_class = sj.value("samples_per_class", s.synth.samples_per_class);
        s.synth.jitter_std = sj.value("jitter_std", s.synth.jitter_std);
        s.synth.n_subjects = sj.value("n_subjects", s.synth.n_subjects);
        s.synth.seed = sj.value("seed", s.synth.seed);
    }
    if (j.contains("split")) {
        SubjectSplit split;
        for (const auto& [subject, role] : j["split"].items()) {
            split.assignment[subject] = split_role_from_string(role.get<std::string>());
        }
        s.split = std::move(split);
    }
    s.mirror_left = j.value("mirror_left", s.mirror_left);
    if (j.contains("encoding")) s.encoding = encoding_from_string(j["encoding"].get<std::string>());
    if (j.contains("strategy")) s.strategy = strategy_from_string(j["strategy"].get<std::string>());
    s.distillation = j.value("distillation", s.distillation);
    s.nem = j.value("nem", s.nem);
    s.joint_from_scratch = j.value("joint_from_scratch", s.joint_from_scratch);
    if (j.contains("selection")) s.selection = selection_from_string(j["selection"].get<std::string>());
    s.n_init = j.value("n_init", s.n_init);
    s.classes_per_task = j.value("classes_per_task", s.classes_per_task);
    s.epochs_init = j.value("epochs_init", s.epochs_init);
    s.epochs_inc = j.value("epochs_inc", s.epochs_inc);
    s.m = j.value("m", s.m);
    s.runs = j.value("runs", s.runs);
    s.seed = j.value("seed", s.seed);
    if (j.contains("hidden")) s.hidden = j["hidden"].get<std::vector<std::size_t>>();
    s.dropout_p = j.value("dropout_p", s.dropout_p);
    s.batch_size = j.value("batch_size", s.batch_size);
    s.distill_weight = j.value("distill_weight", s.distill_weight);
    return s;
}

Matrix encode_frames(const std::vector<const HandFrame*>& frames, Encoding encoding) {
    const auto dim = encoding_dim(encoding);
    // Row-major scratch so each encoding lands contiguously.
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> out(static_cast<Eigen::Index>(frames.size()),
                                                                               static_cast<Eigen::Index>(dim));
    for (std::size_t i = 0; i < frames.size(); ++i) encode_into(*frames[i], encoding, out.row(static_cast<Eigen::Index>(i)).data());
    return out;
}

PreparedData prepare_data(const Scenario& scenario) {
    scenario.validate();
    GestureDataset ds;
    if (scenario.data.empty()) {
        ds = synth_gestures(scenario.synth);
    } else {
        std::vector<std::filesystem::path> paths(scenario.data.begin(), scenario.data.end());
        ds = load_datasets(paths, LoadOptions{scenario.mirror_left});
    }
    const SubjectSplit split = scenario.split ? *scenario.split : SubjectSplit::default_for(ds.subjects());
    const SplitDatasets parts = split_by_subject(ds, split);

    PreparedData out;
    out.classes = ds.classes();
    const auto n = ds.classes().size();
    for (std::size_t c = 0; c < n; ++c) {
        const int id = static_cast<int>(c);
        out.train.push_back(encode_frames(parts.train.frames_of(id), scenario.encoding));
        out.val.push_back(encode_frames(parts.val.frames_of(id), scenario.encoding));
        out.test.push_back(encode_frames(parts.test.frames_of(id), scenario.encoding));
    }
    return out;
}

RunResult run_prepared(const Scenario& scenario, const PreparedData& data, std::size_t run_index,
                       Learner* final_learner) {
    const std::size_t n_classes = data.classes.size();
    if (n_classes < scenario.n_init + 1) {
        throw std::invalid_argument("scenario needs at least " + std::to_string(scenario.n_init + 1) + " classes, dataset has " +
                                    std::to_string(n_classes));
    }
    RunResult result;
    result.run = run_index;
    result.seed = scenario.seed + run_index;

    std::vector<int> order(n_classes);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(result.seed);
    std::shuffle(order.begin(), order.end(), rng);
    for (int c : order) result.class_order.push_back(data.classes.name(c));

    for (int c : order) {
        if (data.train[static_cast<std::size_t>(c)].rows() == 0) {
            throw std::invalid_argument("class '" + data.classes.name(c) + "' has no training samples in the split");
        }
    }

    Learner learner(scenario.learner_config(result.seed));
    std::size_t next = 0;
    while (next < n_classes) {
        const std::size_t take = next == 0 ? scenario.n_init : std::min(scenario.classes_per_task, n_classes - next);
        std::vector<ClassData> batch;
        for (std::size_t k = next; k < next + take; ++k) {
            const auto c = static_cast<std::size_t>(order[k]);
            batch.push_back({data.classes.name(order[k]), data.train[c]});
        }
        const auto t0 = Clock::now();
        if (next == 0) {
            learner.learn_initial(batch);
        } else {
            learner.learn_increment(batch);
        }
        TaskRecord rec;
        rec.train_seconds = seconds_since(t0);
        rec.task = learner.task();
        next += take;
        rec.classes_learned = next;
        for (const auto& b : batch) rec.new_classes.push_back(b.name);

        std::size_t correct = 0;
        double macro_sum = 0.0;
        std::size_t macro_n = 0;
        for (std::size_t k = 0; k < next; ++k) {
            const auto c = static_cast<std::size_t>(order[k]);
            const std::string& name = data.classes.name(order[k]);
            const Matrix& test = data.test[c];
            if (test.rows() == 0) {
                result.warnings.push_back("task " + std::to_string(rec.task) + ": class '" + name + "' has no test samples");
                continue;
            }
            const int learner_id = learner.seen().id(name);
            const auto preds = learner.classify_batch(test);
            const auto hits = static_cast<std::size_t>(std::count(preds.begin(), preds.end(), learner_id));
            correct += hits;
            rec.test_samples += preds.size();
            const double acc = static_cast<double>(hits) / static_cast<double>(preds.size());
            rec.per_class_acc[name] = acc;
            macro_sum += acc;
            ++macro_n;
        }
        rec.task_acc = rec.test_samples ? static_cast<double>(correct) / static_cast<double>(rec.test_samples) : 0.0;
        rec.macro_acc = macro_n ? macro_sum / static_cast<double>(macro_n) : 0.0;
        result.tasks.push_back(std::move(rec));
    }
    double sum = 0.0;
    for (const auto& t : result.tasks) sum += t.task_acc;
    result.final_avg_acc = sum / static_cast<double>(result.tasks.size());
    if (final_learner) *final_learner = std::move(learner);
    return result;
}

RunResult run_scenario(const Scenario& scenario, std::size_t run_index) {
    return run_prepared(scenario, prepare_data(scenario), run_index);
}

std::vector<RunResult> run_all(const Scenario& scenario, std::size_t parallel) {
    const PreparedData data = prepare_data(scenario);
    std::vector<RunResult> results(scenario.runs);
    const std::size_t workers = std::max<std::size_t>(1, std::min(parallel, scenario.runs));
    if (workers == 1) {
        for (std::size_t r = 0; r < scenario.runs; ++r) results[r] = run_prepared(scenario, data, r);
        return results;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t r = next++; r < scenario.runs; r = next++) {
                try {
                    results[r] = run_prepared(scenario, data, r);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
    return results;
}

MeanStd mean_std(const std::vector<double>& values) {
    if (values.empty()) throw std::invalid_argument("mean_std needs values");
    const double n = static_cast<double>(values.size());
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    if (values.size() == 1) return {mean, 0.0};
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    return {mean, std::sqrt(ss / (n - 1.0))};
}

Summary aggregate(const std::vector<RunResult>& results) {
    if (results.empty()) throw std::invalid_argument("aggregate needs at least one run");
    const std::size_t n_tasks = results.front().tasks.size();
    for (const auto& r : results) {
        if (r.tasks.size() != n_tasks) throw std::invalid_argument("runs have mismatched task counts");
        for (std::size_t t = 0; t < n_tasks; ++t) {
            if (r.tasks[t].classes_learned != results.front().tasks[t].classes_learned) {
                throw std::invalid_argument("runs have mismatched task structure");
            }
        }
    }
    Summary s;
    s.runs = results.size();
    for (std::size_t t = 0; t < n_tasks; ++t) {
        std::vector<double> acc, macro;
        for (const auto& r : results) {
            acc.push_back(r.tasks[t].task_acc);
            macro.push_back(r.tasks[t].macro_acc);
        }
        const auto a = mean_std(acc);
        const auto m = mean_std(macro);
        s.tasks.push_back({results.front().tasks[t].task, results.front().tasks[t].classes_learned, a.mean, a.std, m.mean,
                           m.std});
    }
    std::vector<double> finals;
    for (const auto& r : results) finals.push_back(r.final_avg_acc);
    const auto f = mean_std(finals);
    s.final_mean = f.mean;
    s.final_std = f.std;
    return s;
}

nlohmann::json Summary::to_json() const {
    auto tj = nlohmann::json::array();
    for (const auto& t : tasks) {
        tj.push_back({{"task", t.task},
                      {"classes_learned", t.classes_learned},
                      {"mean_acc", t.mean_acc},
                      {"std_acc", t.std_acc},
                      {"mean_macro_acc", t.mean_macro_acc},
                      {"std_macro_acc", t.std_macro_acc}});
    }
    return {{"runs", runs}, {"final_mean", final_mean}, {"final_std", final_std}, {"tasks", std::move(tj)}};
}

Summary Summary::from_json(const nlohmann::json& j) {
    Summary s;
    s.runs = j.at("runs").get<std::size_t>();
    s.final_mean = j.at("final_mean").get<double>();
    s.final_std = j.at("final_std").get<double>();
    for (const auto& t : j.at("tasks")) {
        s.tasks.push_back({t.at("task").get<int>(), t.at("classes_learned").get<std::size_t>(), t.at("mean_acc").get<double>(),
                           t.at("std_acc").get<double>(), t.at("mean_macro_acc").get<double>(),
                           t.at("std_macro_acc").get<double>()});
    }
    return s;
}

std::vector<std::string> metric_file_names(const EmitOptions& opts) {
    std::vector<std::string> out;
    if (opts.csv) out.insert(out.end(), {"runs.csv", "summary.csv", "per_class.csv"});
    if (opts.json) out.emplace_back("summary.json");
    return out;
}

std::vector<std::filesystem::path> emit_metrics(const std::vector<RunResult>& results, const Summary& summary,
                                                const std::filesystem::path& out_dir, const EmitOptions& opts) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec || !std::filesystem::is_directory(out_dir)) {
        throw std::runtime_error("cannot create output directory " + out_dir.string());
    }
    std::vector<const RunResult*> sorted;
    for (const auto& r : results) sorted.push_back(&r);
    std::sort(sorted.begin(), sorted.end(), [](const RunResult* a, const RunResult* b) { return a->run < b->run; });

    std::vector<std::filesystem::path> written;
    if (opts.csv) {
        std::ostringstream runs;
        runs << "run,task,classes_learned,task_acc,train_seconds\n";
        std::ostringstream per_class;
        per_class << "run,task,class,acc\n";
        for (const auto* r : sorted) {
            for (const auto& t : r->tasks) {
                runs << r->run << ',' << t.task << ',' << t.classes_learned << ',' << format_number(t.task_acc) << ',';
                if (opts.include_timings) runs << format_number(t.train_seconds);
                runs << '\n';
                for (const auto& [name, acc] : t.per_class_acc) {
                    per_class << r->run << ',' << t.task << ',' << name << ',' << format_number(acc) << '\n';
                }
            }
        }
        std::ostringstream sum;
        sum << "task,classes_learned,mean_acc,std_acc\n";
        for (const auto& t : summary.tasks) {
            sum << t.task << ',' << t.classes_learned << ',' << format_number(t.mean_acc) << ',' << format_number(t.std_acc)
                << '\n';
        }
        write_file_atomic(out_dir / "runs.csv", runs.str());
        write_file_atomic(out_dir / "summary.csv", sum.str());
        write_file_atomic(out_dir / "per_class.csv", per_class.str());
        written.insert(written.end(), {out_dir / "runs.csv", out_dir / "summary.csv", out_dir / "per_class.csv"});
    }
    if (opts.json) {
        write_file_atomic(out_dir / "summary.json", summary.to_json().dump(2) + "\n");
        written.push_back(out_dir / "summary.json");
    }
    return written;
}

std::vector<StageTiming> profile_inference(const Learner& learner, const std::vector<HandFrame>& frames) {
    if (frames.empty()) throw std::invalid_argument("profile_inference needs at least one frame");
    const Encoding enc = learner.config().encoding;
    for (const auto& f : frames) learner.classify(encode(f, enc));  // warm-up

    std::vector<double> encode_ms, infer_ms, total_ms;
    encode_ms.reserve(frames.size());
    infer_ms.reserve(frames.size());
    total_ms.reserve(frames.size());
    for (const auto& f : frames) {
        const auto t0 = Clock::now();
        const FeatureVector fv = encode(f, enc);
        const auto t1 = Clock::now();
        const Prediction p = learner.classify(fv);
        const auto t2 = Clock::now();
        if (p.class_id < 0) throw std::logic_error("classification failed");
        encode_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
        infer_ms.push_back(std::chrono::duration<double, std::milli>(t2 - t1).count());
        total_ms.push_back(std::chrono::duration<double, std::milli>(t2 - t0).count());
    }
    auto stage = [&](const char* name, const std::vector<double>& v) {
        return StageTiming{name, v.size(), quantile(v, 0.5), quantile(v, 0.95)};
    };
    return {stage("encode", encode_ms), stage("inference", infer_ms), stage("total", total_ms)};
}

TrainingTiming time_increment(const GestureDataset& data, StrategyKind strategy, const TrainingTimeConfig& cfg,
                              const std::string& label, Learner* trained) {
    const std::size_t n = data.classes().size();
    if (n < 3) throw std::invalid_argument("time_increment needs at least 3 classes");
    if (cfg.repeats < 1) throw std::invalid_argument("time_increment needs at least one repeat");
    std::vector<ClassData> classes;
    for (std::size_t c = 0; c < n; ++c) {
        const int id = static_cast<int>(c);
        classes.push_back({data.classes().name(id), encode_frames(data.frames_of(id), cfg.encoding)});
    }
    const std::vector<ClassData> initial(classes.begin(), classes.end() - 1);
    const std::vector<ClassData> last{classes.back()};

    LearnerConfig lc;
    lc.strategy = strategy;
    lc.encoding = cfg.encoding;
    lc.hidden = cfg.hidden;
    lc.initial.epochs = cfg.pretrain_epochs;
    lc.incremental.epochs = cfg.epochs_inc;
    lc.exemplars_per_class = cfg.m;
    lc.seed = cfg.seed;
    Learner pretrained(lc);
    pretrained.learn_initial(initial);

    std::vector<double> secs;
    TrainingTiming out;
    out.label = label.empty() ? to_string(strategy) : label;
    out.strategy = strategy;
    for (std::size_t r = 0; r < cfg.repeats; ++r) {
        Learner l = pretrained;
        const auto t0 = Clock::now();
        l.learn_increment(last);
        secs.push_back(seconds_since(t0));
        std::size_t pool = static_cast<std::size_t>(last.front().features.rows());
        if (uses_memory(strategy)) pool += pretrained.memory().size();
        if (strategy == StrategyKind::Joint) {
            pool = 0;
            for (const auto& c : classes) pool += static_cast<std::size_t>(c.features.rows());
        }
        out.pool_size = pool;
        if (trained && r + 1 == cfg.repeats) *trained = std::move(l);
    }
    out.seconds = quantile(secs, 0.5);
    return out;
}

nlohmann::json TimeReport::to_json() const {
    auto sj = nlohmann::json::array();
    for (const auto& s : stages) {
        sj.push_back({{"stage", s.stage}, {"samples", s.samples}, {"median_ms", s.median_ms}, {"p95_ms", s.p95_ms}});
    }
    auto tj = nlohmann::json::array();
    for (const auto& t : training) {
        tj.push_back({{"label", t.label}, {"strategy", to_string(t.strategy)}, {"pool_size", t.pool_size}, {"seconds", t.seconds}});
    }
    return {{"stages", std::move(sj)}, {"training", std::move(tj)}};
}

}  // namespace hagil
