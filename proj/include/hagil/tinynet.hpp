#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "hagil/random.hpp"

namespace hagil {

using Matrix = Eigen::MatrixXd;  // rows are samples
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

inline constexpr double kBatchNormMomentum = 0.1;
inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kHeadInitStd = 0.01;

struct HiddenLayer {
    Matrix weight;  // out x in
    Vector bias;
    // Batch-norm state; unused when the model is built without batch norm.
    Vector gamma;
    Vector beta;
    Vector running_mean;
    Vector running_var;
};

struct ModelGradients {
    struct Layer {
        Matrix weight;
        Vector bias;
        Vector gamma;
        Vector beta;
    };
    std::vector<Layer> hidden;
    Matrix head_weight;
    Vector head_bias;

    /// Views in the same order as MlpModel::parameters().
    std::vector<std::span<const double>> spans() const;
};

/// Intermediate values of a train-mode forward pass, consumed by backward().
struct ForwardCache {
    struct Layer {
        Matrix input;
        Matrix normalized;  // x-hat (pre-affine BN output), or the affine output without BN
        Vector inv_std;
        Matrix pre_relu;
        Matrix mask;  // dropout scale per element (0 or 1/(1-p)); empty when p == 0
    };
    std::vector<Layer> layers;
    Matrix head_input;
};

struct Architecture {
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden{256, 128};
    double dropout_p = 0.35;
    bool batch_norm = true;
};

/// Fully connected classifier: each hidden layer is
/// affine -> batch norm -> ReLU -> dropout, followed by a linear class head.
class MlpModel {
public:
    enum class Mode { Train, Eval };

    MlpModel() = default;
    MlpModel(const Architecture& arch, std::size_t n_classes, std::uint64_t seed);

    std::size_t input_dim() const { return input_dim_; }
    std::vector<std::size_t> hidden_widths() const;
    std::size_t embedding_dim() const;
    std::size_t n_classes() const { return static_cast<std::size_t>(head_weight_.rows()); }
    double dropout_p() const { return dropout_p_; }
    bool batch_norm() const { return batch_norm_; }
    Architecture architecture() const;
    Mode mode() const { return mode_; }
    void set_mode(Mode m) { mode_ = m; }

    void set_dropout_p(double p);
    void reseed_dropout(std::uint64_t seed) { dropout_rng_.seed(seed); }

    /// Logits for a batch. Train mode uses batch statistics, updates the
    /// running statistics and applies inverted dropout; eval mode is pure.
    Matrix forward(const Matrix& batch, ForwardCache* cache = nullptr);
    /// Eval-mode logits regardless of the current mode.
    Matrix predict(const Matrix& batch) const;
    /// Last hidden layer activations in eval mode, each row L2-normalized
    /// (zero rows stay zero). Requires eval mode.
    Matrix embed(const Matrix& batch, bool normalize = true) const;

    ModelGradients backward(const ForwardCache& cache, const Matrix& dlogits) const;

    /// Adds n_new output rows drawn from N(0, 0.01^2); old rows untouched.
    void expand_head(std::size_t n_new, std::uint64_t seed);

    /// Views over every trainable tensor: per hidden layer weight, bias,
    /// gamma, beta (the last two only with batch norm), then head weight and bias.
    std::vector<std::span<double>> parameters();

    const std::vector<HiddenLayer>& hidden() const { return hidden_; }
    std::vector<HiddenLayer>& hidden() { return hidden_; }
    const Matrix& head_weight() const { return head_weight_; }
    Matrix& head_weight() { return head_weight_; }
    const Vector& head_bias() const { return head_bias_; }
    Vector& head_bias() { return head_bias_; }

    nlohmann::json to_json() const;
    static MlpModel from_json(const nlohmann::json& j);

private:
    Matrix hidden_eval(const Matrix& batch) const;
    void check_input(const Matrix& batch) const;

    std::size_t input_dim_ = 0;
    double dropout_p_ = 0.0;
    bool batch_norm_ = true;
    Mode mode_ = Mode::Eval;
    std::vector<HiddenLayer> hidden_;
    Matrix head_weight_;
    Vector head_bias_;
    Rng dropout_rng_;
};

Matrix softmax_rows(const Matrix& logits, double temperature = 1.0);

struct LossAndGrad {
    double loss = 0.0;
    Matrix grad;  // d loss / d logits
};

/// Mean softmax cross-entropy over the batch.
LossAndGrad cross_entropy(const Matrix& logits, std::span<const int> labels);

enum class DistillForm {
    SigmoidBce,  // per-unit BCE against sigmoid(teacher), averaged over units and samples
    SoftmaxT2,   // CE between temperature-2 softened distributions, averaged over samples
};

const char* to_string(DistillForm f);

LossAndGrad loss_distill(const Matrix& student, const Matrix& teacher, DistillForm form);

/// Reduce-on-plateau learning-rate schedule driven by an epoch loss.
class PlateauScheduler {
public:
    PlateauScheduler(double lr0, double factor, std::size_t patience, double threshold, double min_lr);

    double lr() const { return lr_; }
    /// Feeds one epoch's loss; returns the learning rate for the next epoch.
    double step(double loss);

private:
    double lr_;
    double factor_;
    std::size_t patience_;
    double threshold_;
    double min_lr_;
    double best_;
    std::size_t bad_epochs_ = 0;
};

struct TrainConfig {
    double lr0 = 1e-3;
    double plateau_factor = 3.0;
    std::size_t plateau_patience = 5;
    double plateau_threshold = 1e-4;
    double min_lr = 1e-5;
    std::size_t epochs = 50;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
    double distill_weight = 1.0;
    DistillForm distill_form = DistillForm::SigmoidBce;
    // Drive the scheduler from the validation loss when validation data is given.
    bool monitor_validation = false;

    void validate() const;
};

struct EpochStats {
    double loss = 0.0;
    double accuracy = 0.0;
    double lr = 0.0;
};

struct TrainReport {
    std::vector<EpochStats> epochs;
    double seconds = 0.0;
};

struct TrainData {
    Matrix features;
    std::vector<int> labels;
};

/// Mini-batch Adam training on cross-entropy over every class, plus
/// distill_weight times the distillation loss on the first old_class_count
/// logits when a teacher is given. Leaves the model in eval mode.
TrainReport train_epochs(MlpModel& model, const TrainData& data, const TrainConfig& config,
                         const MlpModel* teacher = nullptr, std::size_t old_class_count = 0,
                         const TrainData* validation = nullptr);

/// Optional hook that alters the analytic gradients before comparison.
using GradientTamper = std::function<void(ModelGradients&)>;

/// Max relative error between backward() and central finite differences
/// (h = 1e-5) of the mean cross-entropy, over every parameter. Dropout is
/// disabled and batch norm uses the statistics of `batch`. The numeric side
/// is evaluated in extended precision by a separate forward implementation.
double grad_check(const MlpModel& model, const Matrix& batch, std::span<const int> labels,
                  const GradientTamper& tamper = {});

struct ModelCheckpoint {
    MlpModel model;
    std::vector<std::string> classes;
};

void save_model(const std::filesystem::path& path, const MlpModel& model,
                const std::vector<std::string>& classes = {});
ModelCheckpoint load_model(const std::filesystem::path& path);

}  // namespace hagil
