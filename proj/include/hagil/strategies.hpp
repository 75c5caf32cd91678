#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "hagil/features.hpp"
#include "hagil/gesture_data.hpp"
#include "hagil/rehearsal.hpp"
#include "hagil/tinynet.hpp"

namespace hagil {

enum class StrategyKind { Joint, FineTune, LwF, ICaRL, IL2M };

const char* to_string(StrategyKind k);
/// Accepts joint, finetune, lwf, icarl, il2m (case-insensitive).
StrategyKind strategy_from_string(const std::string& s);
bool uses_memory(StrategyKind k);

struct Il2mStats {
    std::map<int, double> mu_init;   // true-class probability on training data, end of intro task
    std::map<int, double> mu_cur;    // same on stored exemplars, end of latest task
    std::map<int, int> intro_task;
    std::vector<double> conf;        // per task: mean top-1 probability on that task's new classes

    nlohmann::json to_json() const;
    static Il2mStats from_json(const nlohmann::json& j);
    bool operator==(const Il2mStats&) const = default;
};

inline constexpr double kIl2mMinStat = 1e-6;

/// If the raw argmax belongs to a class introduced at `task`, scales every
/// older class's score by (mu_init / mu_cur) * (conf[task] / conf[intro]).
/// Scores are not renormalized.
std::vector<double> il2m_rectify(std::span<const double> scores, const Il2mStats& stats, int task);

struct Prediction {
    int class_id = -1;
    std::vector<double> scores;
};

/// Nearest class mean by Euclidean distance; ties go to the lowest class id.
/// Scores are negated distances, ordered like `means`.
Prediction nem_classify(const Vector& query, const std::vector<ClassMean>& means);

struct ClassData {
    std::string name;
    Matrix features;  // rows are encoded samples
};

struct LearnerConfig {
    StrategyKind strategy = StrategyKind::ICaRL;
    Encoding encoding = Encoding::Combined;
    std::vector<std::size_t> hidden{256, 128};
    double dropout_p = 0.35;
    bool batch_norm = true;
    TrainConfig initial;      // 50 epochs by default
    TrainConfig incremental;  // 15 epochs by default
    std::size_t exemplars_per_class = 5;
    Selection selection = Selection::Herding;
    bool normalize_herding = true;
    bool distillation = true;  // off: the "-kdl" ablation
    bool nem = true;           // off: iCaRL classifies with softmax ("-NEM")
    bool joint_from_scratch = false;
    std::uint64_t seed = 0;

    LearnerConfig();
    nlohmann::json to_json() const;
    static LearnerConfig from_json(const nlohmann::json& j);
};

class Learner {
public:
    explicit Learner(LearnerConfig config);

    void learn_initial(const std::vector<ClassData>& classes);
    void learn_increment(const std::vector<ClassData>& classes);

    Prediction classify(std::span<const double> features) const;
    Prediction classify(const FeatureVector& feature) const;
    Prediction classify(const HandFrame& frame) const;
    /// Predicted class ids for each row.
    std::vector<int> classify_batch(const Matrix& features) const;

    bool initialized() const { return initialized_; }
    int task() const { return task_; }
    const LearnerConfig& config() const { return config_; }
    const ClassRegistry& seen() const { return seen_; }
    const MlpModel& model() const { return model_; }
    const std::optional<MlpModel>& teacher() const { return teacher_; }
    const ExemplarMemory& memory() const { return memory_; }
    const Il2mStats& il2m() const { return il2m_; }
    const std::vector<ClassMean>& means() const { return means_; }
    /// Joint only: every class's training data seen so far, in class-id order.
    const std::vector<ClassData>& retained() const { return retained_; }
    const TrainReport& last_report() const { return last_report_; }

    nlohmann::json to_json() const;
    static Learner from_json(const nlohmann::json& j);
    void save(const std::filesystem::path& path) const;
    static Learner load(const std::filesystem::path& path);

private:
    TrainData pool_with_exemplars(const std::vector<ClassData>& fresh, std::size_t first_new_id) const;
    TrainConfig task_config(const TrainConfig& base) const;
    void after_task(const std::vector<ClassData>& fresh, std::size_t first_new_id);
    void record_il2m(const std::vector<ClassData>& fresh, std::size_t first_new_id);
    void check_new_classes(const std::vector<ClassData>& classes) const;
    Architecture architecture(std::size_t input_dim) const;
    int argmax_prediction(const RowVector& logits, Prediction* out) const;

    LearnerConfig config_;
    bool initialized_ = false;
    int task_ = -1;
    ClassRegistry seen_;
    MlpModel model_;
    std::optional<MlpModel> teacher_;
    ExemplarMemory memory_;
    Il2mStats il2m_;
    std::vector<ClassMean> means_;
    std::vector<ClassData> retained_;
    TrainReport last_report_;
};

}  // namespace hagil
