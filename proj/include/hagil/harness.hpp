#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hagil/features.hpp"
#include "hagil/gesture_data.hpp"
#include "hagil/strategies.hpp"

namespace hagil {

/// One incremental-learning experiment. Mirrors the scenario JSON file;
/// every field is optional there.
struct Scenario {
    std::vector<std::string> data;  // landmark files; empty means `synth`
    SynthConfig synth;
    std::optional<SubjectSplit> split;  // default: SubjectSplit::default_for
    bool mirror_left = false;

    Encoding encoding = Encoding::Combined;
    StrategyKind strategy = StrategyKind::ICaRL;
    bool distillation = true;
    bool nem = true;
    bool joint_from_scratch = false;
    Selection selection = Selection::Herding;

    std::size_t n_init = 2;
    std::size_t classes_per_task = 1;
    std::size_t epochs_init = 50;
    std::size_t epochs_inc = 15;
    std::size_t m = 5;
    std::size_t runs = 10;
    std::uint64_t seed = 0;

    std::vector<std::size_t> hidden{256, 128};
    double dropout_p = 0.35;
    std::size_t batch_size = 32;
    double distill_weight = 1.0;

    void validate() const;
    /// Learner configuration for one run (seed already derived).
    LearnerConfig learner_config(std::uint64_t run_seed) const;

    nlohmann::json to_json() const;
    static Scenario from_json(const nlohmann::json& j);
    /// Missing fields keep the values already in `base`.
    static Scenario from_json(const nlohmann::json& j, Scenario base);
};

/// Train/test features grouped by dataset class id.
struct PreparedData {
    ClassRegistry classes;
    std::vector<Matrix> train;
    std::vector<Matrix> val;
    std::vector<Matrix> test;
};

PreparedData prepare_data(const Scenario& scenario);

Matrix encode_frames(const std::vector<const HandFrame*>& frames, Encoding encoding);

struct TaskRecord {
    int task = 0;
    std::size_t classes_learned = 0;
    std::vector<std::string> new_classes;
    double task_acc = 0.0;   // pooled over every seen class's test samples
    double macro_acc = 0.0;  // mean of per-class accuracies (classes with test data)
    std::map<std::string, double> per_class_acc;
    std::size_t test_samples = 0;
    double train_seconds = 0.0;
};

struct RunResult {
    std::size_t run = 0;
    std::uint64_t seed = 0;
    std::vector<std::string> class_order;
    std::vector<TaskRecord> tasks;
    double final_avg_acc = 0.0;  // mean task accuracy over all tasks
    std::vector<std::string> warnings;
};

RunResult run_scenario(const Scenario& scenario, std::size_t run_index);
RunResult run_prepared(const Scenario& scenario, const PreparedData& data, std::size_t run_index,
                       Learner* final_learner = nullptr);
/// Runs 0..runs-1, up to `parallel` at a time; results ordered by run index.
std::vector<RunResult> run_all(const Scenario& scenario, std::size_t parallel = 1);

struct TaskSummary {
    int task = 0;
    std::size_t classes_learned = 0;
    double mean_acc = 0.0;
    double std_acc = 0.0;
    double mean_macro_acc = 0.0;
    double std_macro_acc = 0.0;

    bool operator==(const TaskSummary&) const = default;
};

struct Summary {
    std::size_t runs = 0;
    std::vector<TaskSummary> tasks;
    double final_mean = 0.0;
    double final_std = 0.0;

    nlohmann::json to_json() const;
    static Summary from_json(const nlohmann::json& j);
    bool operator==(const Summary&) const = default;
};

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;  // sample standard deviation, 0 for a single value
};

MeanStd mean_std(const std::vector<double>& values);

Summary aggregate(const std::vector<RunResult>& results);

struct EmitOptions {
    bool csv = true;
    bool json = true;
    // Wall-clock training times vary between executions; without this the
    // train_seconds column is left empty so identical runs give identical files.
    bool include_timings = false;
};

/// Writes runs.csv, summary.csv, per_class.csv and summary.json; returns the paths written.
std::vector<std::filesystem::path> emit_metrics(const std::vector<RunResult>& results, const Summary& summary,
                                                const std::filesystem::path& out_dir, const EmitOptions& opts = {});
/// File names emit_metrics may write, for overwrite checks.
std::vector<std::string> metric_file_names(const EmitOptions& opts);

struct StageTiming {
    std::string stage;
    std::size_t samples = 0;
    double median_ms = 0.0;
    double p95_ms = 0.0;
};

/// Per-sample latency of encoding and learner inference over `frames`
/// after one untimed warm-up pass. Stages: encode, inference, total.
std::vector<StageTiming> profile_inference(const Learner& learner, const std::vector<HandFrame>& frames);

struct TrainingTiming {
    std::string label;
    StrategyKind strategy = StrategyKind::ICaRL;
    std::size_t pool_size = 0;  // samples seen per epoch during the timed increment
    double seconds = 0.0;       // median over repeats
};

struct TrainingTimeConfig {
    std::size_t pretrain_epochs = 50;
    std::size_t epochs_inc = 15;
    std::size_t m = 5;
    std::size_t repeats = 1;
    std::uint64_t seed = 0;
    std::vector<std::size_t> hidden{256, 128};
    Encoding encoding = Encoding::Combined;
};

/// Trains a learner on every class but the last, then times learning the
/// last class. `data` is used whole as training data. The learner after the
/// timed increment is stored in `trained` when given.
TrainingTiming time_increment(const GestureDataset& data, StrategyKind strategy, const TrainingTimeConfig& cfg,
                              const std::string& label = {}, Learner* trained = nullptr);

struct TimeReport {
    std::vector<StageTiming> stages;
    std::vector<TrainingTiming> training;

    nlohmann::json to_json() const;
};

}  // namespace hagil
