#include <doctest.h>

#include <fstream>
#include <sstream>

#include "hagil/harness.hpp"
#include "hagil/io_util.hpp"
#include "test_support.hpp"

using namespace hagil;
using hagil::test::TempDir;

namespace {

Scenario small_scenario() {
    Scenario s;
    s.synth.n_classes = 4;
    s.synth.samples_per_class = 15;
    s.epochs_init = 5;
    s.epochs_inc = 3;
    s.runs = 2;
    s.hidden = {32, 16};
    return s;
}

RunResult fake_run(std::size_t run, std::vector<double> accs) {
    RunResult r;
    r.run = run;
    double sum = 0.0;
    for (std::size_t t = 0; t < accs.size(); ++t) {
        TaskRecord rec;
        rec.task = static_cast<int>(t);
        rec.classes_learned = 2 + t;
        rec.task_acc = accs[t];
        rec.macro_acc = accs[t];
        rec.per_class_acc = {{"a", accs[t]}};
        r.tasks.push_back(rec);
        sum += accs[t];
    }
    r.final_avg_acc = sum / static_cast<double>(accs.size());
    return r;
}

std::vector<std::string> lines_of(const std::filesystem::path& p) {
    std::istringstream in(read_file(p));
    std::vector<std::string> out;
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

}  // namespace

TEST_CASE("two-point sample statistics") {
    const auto ms = mean_std({0.90, 0.94});
    CHECK(ms.mean == doctest::Approx(0.92));
    CHECK(ms.std == doctest::Approx(0.0282842712).epsilon(1e-8));
    CHECK(mean_std({0.5}).std == 0.0);
}

TEST_CASE("aggregate over runs") {
    const auto s = aggregate({fake_run(0, {0.90, 0.90}), fake_run(1, {0.94, 0.94})});
    CHECK(s.runs == 2);
    REQUIRE(s.tasks.size() == 2);
    CHECK(s.tasks[1].mean_acc == doctest::Approx(0.92));
    CHECK(s.tasks[1].std_acc == doctest::Approx(0.0282842712).epsilon(1e-8));
    CHECK(s.final_mean == doctest::Approx(0.92));

    const auto single = aggregate({fake_run(0, {0.7, 0.6, 0.5})});
    CHECK(single.final_std == 0.0);
    for (const auto& t : single.tasks) CHECK(t.std_acc == 0.0);

    CHECK_THROWS(aggregate({fake_run(0, {0.9}), fake_run(1, {0.9, 0.8})}));
    CHECK_THROWS(aggregate({}));
}

TEST_CASE("property: summary means stay inside the run envelope") {
    Rng rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<RunResult> runs;
        for (std::size_t r = 0; r < 10; ++r) runs.push_back(fake_run(r, {u(rng), u(rng), u(rng)}));
        const auto s = aggregate(runs);
        for (std::size_t t = 0; t < 3; ++t) {
            double lo = 1.0, hi = 0.0;
            for (const auto& r : runs) {
                lo = std::min(lo, r.tasks[t].task_acc);
                hi = std::max(hi, r.tasks[t].task_acc);
            }
            REQUIRE(s.tasks[t].mean_acc >= lo - 1e-12);
            REQUIRE(s.tasks[t].mean_acc <= hi + 1e-12);
            REQUIRE(s.tasks[t].std_acc >= 0.0);
        }
    }
}

TEST_CASE("emit writes the declared files") {
    TempDir dir("emit");
    const std::vector<RunResult> runs{fake_run(1, {0.5, 0.6, 0.7}), fake_run(0, {0.8, 0.85, 0.9})};
    const auto summary = aggregate(runs);
    const auto written = emit_metrics(runs, summary, dir.path());
    CHECK(written.size() == 4);

    const auto rl = lines_of(dir / "runs.csv");
    REQUIRE(rl.size() == 7);
    CHECK(rl[0] == "run,task,classes_learned,task_acc,train_seconds");
    CHECK(rl[1].rfind("0,0,2,0.8,", 0) == 0);
    const auto sl = lines_of(dir / "summary.csv");
    REQUIRE(sl.size() == 4);
    CHECK(sl[0] == "task,classes_learned,mean_acc,std_acc");
    CHECK(lines_of(dir / "per_class.csv").front() == "run,task,class,acc");

    const auto back = Summary::from_json(nlohmann::json::parse(read_file(dir / "summary.json")));
    CHECK(back == summary);

    TempDir only_json("emit_json");
    EmitOptions eo;
    eo.csv = false;
    emit_metrics(runs, summary, only_json.path(), eo);
    CHECK_FALSE(std::filesystem::exists(only_json / "runs.csv"));
    CHECK(std::filesystem::exists(only_json / "summary.json"));
}

TEST_CASE("scenario json round trip and validation") {
    Scenario s = small_scenario();
    s.strategy = StrategyKind::IL2M;
    s.data = {"a.jsonl", "b.jsonl"};
    s.split = SubjectSplit{{{"x", SplitRole::Train}, {"y", SplitRole::Test}}};
    const Scenario back = Scenario::from_json(s.to_json());
    CHECK(back.to_json() == s.to_json());

    CHECK_THROWS(Scenario::from_json(nlohmann::json{{"bogus", 1}}));
    const auto one_file = Scenario::from_json(nlohmann::json{{"data", "x.jsonl"}});
    CHECK(one_file.data == std::vector<std::string>{"x.jsonl"});
    const auto partial = Scenario::from_json(nlohmann::json{{"m", 9}}, s);
    CHECK(partial.m == 9);
    CHECK(partial.strategy == StrategyKind::IL2M);

    Scenario bad = small_scenario();
    bad.n_init = 1;
    CHECK_THROWS(bad.validate());
    bad = small_scenario();
    bad.runs = 0;
    CHECK_THROWS(bad.validate());
}

TEST_CASE("run structure and determinism") {
    const Scenario s = small_scenario();
    const auto a = run_scenario(s, 0);
    CHECK(a.seed == s.seed + 0);
    REQUIRE(a.tasks.size() == 3);
    for (std::size_t t = 0; t < 3; ++t) {
        CHECK(a.tasks[t].classes_learned == 2 + t);
        CHECK(a.tasks[t].task_acc >= 0.0);
        CHECK(a.tasks[t].task_acc <= 1.0);
        CHECK(a.tasks[t].per_class_acc.size() == 2 + t);
    }
    CHECK(a.class_order.size() == 4);

    const auto b = run_scenario(s, 0);
    CHECK(b.class_order == a.class_order);
    for (std::size_t t = 0; t < 3; ++t) {
        CHECK(b.tasks[t].task_acc == a.tasks[t].task_acc);
        CHECK(b.tasks[t].per_class_acc == a.tasks[t].per_class_acc);
    }
    const auto other = run_scenario(s, 1);
    CHECK(other.seed == s.seed + 1);
}

TEST_CASE("parallel execution gives the same files") {
    const Scenario s = small_scenario();
    TempDir d1("par1"), d2("par2");
    const auto serial = run_all(s, 1);
    const auto parallel = run_all(s, 2);
    emit_metrics(serial, aggregate(serial), d1.path());
    emit_metrics(parallel, aggregate(parallel), d2.path());
    for (const char* f : {"runs.csv", "summary.csv", "per_class.csv", "summary.json"}) {
        CHECK(read_file(d1 / f) == read_file(d2 / f));
    }
}

TEST_CASE("zero incremental epochs still evaluate every task") {
    Scenario s = small_scenario();
    s.strategy = StrategyKind::Joint;
    s.epochs_inc = 0;
    s.n_init = 3;
    s.runs = 1;
    const auto r = run_scenario(s, 0);
    REQUIRE(r.tasks.size() == 2);
    CHECK(r.tasks[1].classes_learned == 4);
}

TEST_CASE("too few classes is rejected") {
    Scenario s = small_scenario();
    s.n_init = 4;
    CHECK_THROWS(run_scenario(s, 0));
}

TEST_CASE("profile_inference reports three stages") {
    Scenario s = small_scenario();
    Learner learner(s.learner_config(0));
    SynthConfig sc = s.synth;
    sc.samples_per_class = 30;
    const auto ds = synth_gestures(sc);
    std::vector<ClassData> init;
    for (int c = 0; c < 2; ++c) init.push_back({ds.classes().name(c), encode_frames(ds.frames_of(c), s.encoding)});
    learner.learn_initial(init);
    const std::vector<HandFrame> frames(ds.frames().begin(), ds.frames().begin() + 120);
    const auto stages = profile_inference(learner, frames);
    REQUIRE(stages.size() == 3);
    CHECK(stages[0].stage == "encode");
    CHECK(stages[1].stage == "inference");
    CHECK(stages[2].stage == "total");
    for (const auto& st : stages) {
        CHECK(st.samples == 120);
        CHECK(st.median_ms <= st.p95_ms);
    }
    CHECK_THROWS(profile_inference(learner, {}));
}
