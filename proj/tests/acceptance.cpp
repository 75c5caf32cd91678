// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "hagil/features.hpp"
#include "hagil/harness.hpp"
#include "hagil/io_util.hpp"
#include "hagil/rehearsal.hpp"
#include "hagil/strategies.hpp"
#include "hagil/tinynet.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace hagil;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

int failures = 0;

void report(const std::string& name, bool ok, const std::string& detail) {
    std::cout << (ok ? "PASS " : "FAIL ") << name << " :: " << detail << std::endl;
    if (!ok) ++failures;
}

void skip(const std::string& name, const std::string& why) { std::cout << "SKIP " << name << " :: " << why << std::endl; }

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::size_t workers() { return std::max(1u, std::thread::hardware_concurrency()); }

std::string fmt(double v) { return format_number(v); }

void feature_dimensions() {
    Rng rng(101);
    bool ok = true;
    for (int i = 0; i < 1000; ++i) {
        const auto f = test::random_frame(rng);
        for (auto e : kAllEncodings) ok &= encode(f, e).values.size() == encoding_dim(e);
    }
    ok &= encoding_dim(Encoding::Raw2D) == 42 && encoding_dim(Encoding::Raw3D) == 63 &&
          encoding_dim(Encoding::WristDiff) == 40 && encoding_dim(Encoding::WristEuclidean) == 20 &&
          encoding_dim(Encoding::AllEuclidean) == 210 && encoding_dim(Encoding::AllDiff) == 420 &&
          encoding_dim(Encoding::Combined) == 670;
    report("feature-dimensions", ok, "1000 frames x 7 encodings, lengths 42/63/40/20/210/420/670");
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

void translation_invariance() {
    Rng rng(102);
    std::uniform_real_distribution<double> shift(-0.5, 0.5), angle(-M_PI, M_PI), centre(-1.0, 2.0);
    double worst_shift = 0.0, worst_rot = 0.0;
    bool wrist_changed = false;
    for (int i = 0; i < 1000; ++i) {
        const auto f = test::random_frame(rng);
        HandFrame t = f;
        const double dx = shift(rng), dy = shift(rng);
        for (auto& p : t.landmarks) {
            p.x += dx;
            p.y += dy;
        }
        for (auto e : {Encoding::WristDiff, Encoding::WristEuclidean, Encoding::AllDiff, Encoding::AllEuclidean,
                       Encoding::Combined}) {
            worst_shift = std::max(worst_shift, max_abs_diff(encode(f, e).values, encode(t, e).values));
        }
        HandFrame r = f;
        const double a = angle(rng), cx = centre(rng), cy = centre(rng), c = std::cos(a), s = std::sin(a);
        for (auto& p : r.landmarks) {
            const double x = p.x - cx, y = p.y - cy;
            p.x = cx + c * x - s * y;
            p.y = cy + s * x + c * y;
        }
        worst_rot = std::max(worst_rot, max_abs_diff(encode(f, Encoding::AllEuclidean).values,
                                                     encode(r, Encoding::AllEuclidean).values));
        if (max_abs_diff(encode(f, Encoding::WristDiff).values, encode(r, Encoding::WristDiff).values) > 1e-6) {
            wrist_changed = true;
        }
    }
    report("translation-invariance", worst_shift <= 1e-12 && worst_rot <= 1e-9 && wrist_changed,
           "max shift delta " + fmt(worst_shift) + " (<= 1e-12), max rotation delta " + fmt(worst_rot) +
               " (<= 1e-9), WristDiff rotation dependent: " + (wrist_changed ? "yes" : "no"));
}

void gradient_correctness() {
    Rng rng(103);
    MlpModel model(Architecture{encoding_dim(Encoding::Combined)}, 10, 7);
    const Matrix x = test::random_matrix(rng, 8, static_cast<Eigen::Index>(model.input_dim()), 0.5);
    const std::vector<int> y{0, 1, 2, 3, 4, 5, 6, 7};
    const auto t0 = Clock::now();
    const double err = grad_check(model, x, y);
    const double secs = seconds_since(t0);
    report("gradient-correctness", err < 1e-4 && secs < 60.0,
           "max relative error " + fmt(err) + " (< 1e-4) in " + fmt(secs) + " s (< 60 s)");
}

test::Points to_points(const Matrix& m) {
    test::Points p(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(m.cols())));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) p[i][j] = m(i, j);
    return p;
}

void herding_oracle() {
    Rng rng(104);
    std::uniform_int_distribution<int> n_dist(1, 50), m_dist(1, 10), d_dist(1, 16);
    int matched = 0, first_ok = 0;
    for (int i = 0; i < 100; ++i) {
        Matrix x = test::random_matrix(rng, n_dist(rng), d_dist(rng));
        if (i % 2 == 0) x.rowwise().normalize();
        const auto m = static_cast<std::size_t>(m_dist(rng));
        const auto got = herd_select(x, m);
        matched += got == test::herd_oracle(to_points(x), m);
        Eigen::Index arg;
        (x.rowwise() - x.colwise().mean()).rowwise().squaredNorm().minCoeff(&arg);
        first_ok += got.front() == static_cast<std::size_t>(arg);
    }
    report("herding-oracle", matched == 100 && first_ok == 100,
           std::to_string(matched) + "/100 identical to greedy oracle, first pick = argmin in " +
               std::to_string(first_ok) + "/100");
}

void nem_oracle() {
    Rng rng(105);
    std::uniform_int_distribution<int> c_dist(1, 20), d_dist(2, 32);
    int matched = 0, total = 0;
    for (int i = 0; i < 100; ++i) {
        const int c = c_dist(rng), d = d_dist(rng);
        std::vector<int> ids(static_cast<std::size_t>(c));
        std::iota(ids.begin(), ids.end(), 0);
        std::shuffle(ids.begin(), ids.end(), rng);
        std::vector<ClassMean> means;
        test::Points pts;
        for (int k = 0; k < c; ++k) {
            Vector v = test::random_matrix(rng, d, 1);
            v.normalize();
            // Every fourth set repeats a mean so exact ties occur.
            if (i % 4 == 0 && k > 0 && k % 2 == 1) v = means.back().mean;
            means.push_back({ids[static_cast<std::size_t>(k)], v, 1});
            pts.emplace_back(v.data(), v.data() + d);
        }
        for (int q = 0; q < 10; ++q) {
            Vector query = test::random_matrix(rng, d, 1);
            if (q == 0) query = means[static_cast<std::size_t>(c - 1)].mean;
            const std::vector<double> qv(query.data(), query.data() + d);
            matched += nem_classify(query, means).class_id == test::nem_oracle(qv, pts, ids);
            ++total;
        }
    }
    report("nem-oracle", matched == total,
           std::to_string(matched) + "/" + std::to_string(total) + " queries over 100 mean sets match brute force");
}

Scenario frozen_scenario(StrategyKind k) {
    Scenario s;
    s.synth.n_classes = 10;
    s.synth.samples_per_class = 30;
    s.synth.jitter_std = 0.02;
    s.synth.n_subjects = 3;
    s.n_init = 2;
    s.classes_per_task = 1;
    s.runs = 5;
    s.m = 5;
    s.selection = Selection::Herding;
    s.epochs_inc = 15;
    s.strategy = k;
    return s;
}

double final_mean(const Scenario& s) { return aggregate(run_all(s, workers())).final_mean; }

void forgetting_and_ablation() {
    const auto t0 = Clock::now();
    const double icarl = final_mean(frozen_scenario(StrategyKind::ICaRL));
    const double lwf = final_mean(frozen_scenario(StrategyKind::LwF));
    const double joint = final_mean(frozen_scenario(StrategyKind::Joint));
    const double secs = seconds_since(t0);
    const bool a = icarl >= 0.80, b = icarl - lwf > 0.20, c = joint >= icarl - 0.05;
    report("forgetting-benchmark", a && b && c && secs < 600.0,
           "iCaRL " + fmt(icarl) + " (>= 0.80), LwF " + fmt(lwf) + " (gap " + fmt(icarl - lwf) +
               " > 0.20), Joint " + fmt(joint) + " (>= iCaRL - 0.05), " + fmt(secs) + " s (< 600 s)");

    Scenario kdl = frozen_scenario(StrategyKind::ICaRL);
    kdl.distillation = false;
    const double no_kdl = final_mean(kdl);
    kdl.nem = false;
    const double no_kdl_nem = final_mean(kdl);
    report("ablation-ordering", icarl >= no_kdl - 0.02 && no_kdl >= no_kdl_nem - 0.02,
           "iCaRL " + fmt(icarl) + " >= iCaRL-kdl " + fmt(no_kdl) + " >= iCaRL-kdl-NEM " + fmt(no_kdl_nem) +
               " (2-point allowance)");
}

void time_ratio_and_latency() {
    SynthConfig sc;
    sc.n_classes = 28;
    sc.samples_per_class = 200;
    const auto ds = synth_gestures(sc);
    TrainingTimeConfig cfg;
    cfg.pretrain_epochs = 20;
    cfg.epochs_inc = 15;
    cfg.m = 5;
    Learner hagil_learner{LearnerConfig{}};
    const auto hagil = time_increment(ds, StrategyKind::ICaRL, cfg, "hagil", &hagil_learner);
    const auto joint = time_increment(ds, StrategyKind::Joint, cfg, "joint");
    const double ratio = hagil.seconds / joint.seconds;
    report("training-time-ratio", ratio <= 0.15,
           "HAGIL " + fmt(hagil.seconds) + " s vs Joint " + fmt(joint.seconds) + " s, ratio " + fmt(ratio) +
               " (<= 0.15)");

    std::vector<HandFrame> frames(ds.frames().begin(), ds.frames().begin() + 1000);
    const auto stages = profile_inference(hagil_learner, frames);
    double total = 0.0, enc = 0.0, inf = 0.0;
    for (const auto& s : stages) {
        if (s.stage == "total") total = s.median_ms;
        if (s.stage == "encode") enc = s.median_ms;
        if (s.stage == "inference") inf = s.median_ms;
    }
    report("inference-latency", total < 5.0,
           "median per sample " + fmt(total) + " ms (< 5 ms): encode " + fmt(enc) + " ms, inference " + fmt(inf) +
               " ms over 1000 frames");
}

void determinism() {
    Scenario s = frozen_scenario(StrategyKind::ICaRL);
    s.runs = 2;
    s.seed = 2024;
    const auto dir = fs::temp_directory_path() / ("hagil_accept_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    const auto a = run_all(s, 1);
    const auto b = run_all(s, workers());
    emit_metrics(a, aggregate(a), dir / "a");
    emit_metrics(b, aggregate(b), dir / "b");
    const bool same = read_file(dir / "a" / "runs.csv") == read_file(dir / "b" / "runs.csv");
    fs::remove_all(dir);
    report("determinism", same, "runs.csv from two executions byte-identical");
}

void real_data() {
    const char* env = std::getenv("HAGIL_REAL_DATA");
    if (!env || !*env) {
        skip("real-data-reproduction", "set HAGIL_REAL_DATA to colon-separated landmark files to enable");
        return;
    }
    Scenario s;
    std::stringstream ss(env);
    for (std::string p; std::getline(ss, p, ':');)
        if (!p.empty()) s.data.push_back(p);
    s.strategy = StrategyKind::ICaRL;
    s.m = 5;
    s.epochs_inc = 15;
    s.runs = 10;
    const auto results = run_all(s, workers());
    const auto summary = aggregate(results);
    const std::size_t classes = summary.tasks.empty() ? 0 : summary.tasks.back().classes_learned;
    report("real-data-reproduction", classes == 38 && summary.final_mean >= 0.88,
           std::to_string(classes) + " classes, final average accuracy " + fmt(summary.final_mean) + " +/- " +
               fmt(summary.final_std) + " (>= 0.88)");
}

}  // namespace

int main() {
    const auto t0 = Clock::now();
    feature_dimensions();
    translation_invariance();
    gradient_correctness();
    herding_oracle();
    nem_oracle();
    forgetting_and_ablation();
    time_ratio_and_latency();
    determinism();
    real_data();
    std::cout << (failures == 0 ? "ALL PASS" : std::to_string(failures) + " FAILED") << " in "
              << fmt(seconds_since(t0)) << " s" << std::endl;
    return failures == 0 ? 0 : 1;
}
