#include "hagil/tinynet.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "hagil/io_util.hpp"

namespace hagil {

namespace {

void relu_inplace(Matrix& m) { m = m.cwiseMax(0.0); }

void normalize_rows(Matrix& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const double n = m.row(i).norm();
        if (n > 0.0) m.row(i) /= n;
    }
}

// One matrix-vector product per class keeps each logit column independent
// of the head size, so growing the head leaves old logits bit-identical.
Matrix head_logits(const Matrix& input, const Matrix& weight, const Vector& bias) {
    Matrix out(input.rows(), weight.rows());
    for (Eigen::Index j = 0; j < weight.rows(); ++j) {
        out.col(j) = input * weight.row(j).transpose();
        out.col(j).array() += bias(j);
    }
    return out;
}

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, double std, Rng& rng) {
    std::normal_distribution<double> dist(0.0, std);
    Matrix m(rows, cols);
    // Fill row by row so appended rows do not depend on existing ones.
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = dist(rng);
    return m;
}

nlohmann::json matrix_to_json(const Matrix& m) {
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

Matrix matrix_from_json(const nlohmann::json& j) {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const auto& data = j.at("data");
    if (static_cast<Eigen::Index>(data.size()) != rows * cols) {
        throw std::invalid_argument("matrix payload size does not match its shape");
    }
    Matrix m(rows, cols);
    std::size_t k = 0;
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = data[k++].get<double>();
    return m;
}

nlohmann::json vector_to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vector vector_from_json(const nlohmann::json& j) {
    const auto data = j.get<std::vector<double>>();
    return Eigen::Map<const Vector>(data.data(), static_cast<Eigen::Index>(data.size()));
}

}  // namespace

std::vector<std::span<const double>> ModelGradients::spans() const {
    std::vector<std::span<const double>> out;
    for (const auto& l : hidden) {
        out.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
        out.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
        if (l.gamma.size() > 0) {
            out.emplace_back(l.gamma.data(), static_cast<std::size_t>(l.gamma.size()));
            out.emplace_back(l.beta.data(), static_cast<std::size_t>(l.beta.size()));
        }
    }
    out.emplace_back(head_weight.data(), static_cast<std::size_t>(head_weight.size()));
    out.emplace_back(head_bias.data(), static_cast<std::size_t>(head_bias.size()));
    return out;
}

MlpModel::MlpModel(const Architecture& arch, std::size_t n_classes, std::uint64_t seed)
    : input_dim_(arch.input_dim), batch_norm_(arch.batch_norm), dropout_rng_(derive_seed(seed, 1)) {
    if (arch.input_dim == 0) throw std::invalid_argument("input_dim must be positive");
    if (n_classes == 0) throw std::invalid_argument("model needs at least one class");
    set_dropout_p(arch.dropout_p);
    Rng rng(derive_seed(seed, 0));
    std::size_t fan_in = arch.input_dim;
    for (std::size_t width : arch.hidden) {
        if (width == 0) throw std::invalid_argument("hidden layer width must be positive");
        HiddenLayer l;
        const auto w = static_cast<Eigen::Index>(width);
        l.weight = gaussian(w, static_cast<Eigen::Index>(fan_in), std::sqrt(2.0 / static_cast<double>(fan_in)), rng);
        l.bias = Vector::Zero(w);
        if (batch_norm_) {
            l.gamma = Vector::Ones(w);
            l.beta = Vector::Zero(w);
            l.running_mean = Vector::Zero(w);
            l.running_var = Vector::Ones(w);
        }
        hidden_.push_back(std::move(l));
        fan_in = width;
    }
    head_weight_ = gaussian(static_cast<Eigen::Index>(n_classes), static_cast<Eigen::Index>(fan_in), kHeadInitStd, rng);
    head_bias_ = Vector::Zero(static_cast<Eigen::Index>(n_classes));
}

std::vector<std::size_t> MlpModel::hidden_widths() const {
    std::vector<std::size_t> out;
    for (const auto& l : hidden_) out.push_back(static_cast<std::size_t>(l.weight.rows()));
    return out;
}

std::size_t MlpModel::embedding_dim() const {
    return hidden_.empty() ? input_dim_ : static_cast<std::size_t>(hidden_.back().weight.rows());
}

Architecture MlpModel::architecture() const { return {input_dim_, hidden_widths(), dropout_p_, batch_norm_}; }

void MlpModel::set_dropout_p(double p) {
    if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout probability must lie in [0, 1)");
    dropout_p_ = p;
}

void MlpModel::check_input(const Matrix& batch) const {
    if (static_cast<std::size_t>(batch.cols()) != input_dim_) {
        throw std::invalid_argument("batch has " + std::to_string(batch.cols()) + " columns, model expects " +
                                    std::to_string(input_dim_));
    }
}

Matrix MlpModel::hidden_eval(const Matrix& batch) const {
    check_input(batch);
    Matrix a = batch;
    for (const auto& l : hidden_) {
        Matrix z = a * l.weight.transpose();
        z.rowwise() += l.bias.transpose();
        if (batch_norm_) {
            const RowVector inv_std = (l.running_var.array() + kBatchNormEps).rsqrt().matrix().transpose();
            const RowVector scale = l.gamma.transpose().cwiseProduct(inv_std);
            const RowVector shift = l.beta.transpose() - l.running_mean.transpose().cwiseProduct(scale);
            z = (z.array().rowwise() * scale.array()).rowwise() + shift.array();
        }
        relu_inplace(z);
        a = std::move(z);
    }
    return a;
}

Matrix MlpModel::predict(const Matrix& batch) const { return head_logits(hidden_eval(batch), head_weight_, head_bias_); }

Matrix MlpModel::embed(const Matrix& batch, bool normalize) const {
    if (mode_ != Mode::Eval) throw std::logic_error("embed requires an eval-mode model");
    Matrix e = hidden_eval(batch);
    if (normalize) normalize_rows(e);
    return e;
}

Matrix MlpModel::forward(const Matrix& batch, ForwardCache* cache) {
    if (mode_ == Mode::Eval) return predict(batch);
    check_input(batch);
    const Eigen::Index n = batch.rows();
    if (batch_norm_ && n < 2) throw std::invalid_argument("train-mode forward needs a batch of at least 2 rows");
    if (cache) cache->layers.clear();

    Matrix a = batch;
    for (auto& l : hidden_) {
        ForwardCache::Layer c;
        if (cache) c.input = a;
        Matrix z = a * l.weight.transpose();
        z.rowwise() += l.bias.transpose();
        if (batch_norm_) {
            const RowVector mean = z.colwise().mean();
            z.rowwise() -= mean;
            const RowVector var = z.array().square().colwise().mean();
            const RowVector inv_std = (var.array() + kBatchNormEps).rsqrt();
            z.array().rowwise() *= inv_std.array();
            if (cache) {
                c.normalized = z;
                c.inv_std = inv_std.transpose();
            }
            z = (z.array().rowwise() * l.gamma.transpose().array()).rowwise() + l.beta.transpose().array();
            const double unbias = static_cast<double>(n) / static_cast<double>(n - 1);
            l.running_mean = (1.0 - kBatchNormMomentum) * l.running_mean + kBatchNormMomentum * mean.transpose();
            l.running_var = (1.0 - kBatchNormMomentum) * l.running_var + kBatchNormMomentum * unbias * var.transpose();
        }
        if (cache) c.pre_relu = z;
        relu_inplace(z);
        if (dropout_p_ > 0.0) {
            std::bernoulli_distribution keep(1.0 - dropout_p_);
            const double scale = 1.0 / (1.0 - dropout_p_);
            Matrix mask(z.rows(), z.cols());
            for (Eigen::Index j = 0; j < mask.cols(); ++j)
                for (Eigen::Index i = 0; i < mask.rows(); ++i) mask(i, j) = keep(dropout_rng_) ? scale : 0.0;
            z.array() *= mask.array();
            if (cache) c.mask = std::move(mask);
        }
        if (cache) cache->layers.push_back(std::move(c));
        a = std::move(z);
    }
    if (cache) cache->head_input = a;
    return head_logits(a, head_weight_, head_bias_);
}

ModelGradients MlpModel::backward(const ForwardCache& cache, const Matrix& dlogits) const {
    if (cache.layers.size() != hidden_.size()) throw std::invalid_argument("forward cache does not match the model");
    ModelGradients g;
    g.head_weight = dlogits.transpose() * cache.head_input;
    g.head_bias = dlogits.colwise().sum().transpose();
    Matrix da = dlogits * head_weight_;

    g.hidden.resize(hidden_.size());
    for (std::size_t k = hidden_.size(); k-- > 0;) {
        const auto& l = hidden_[k];
        const auto& c = cache.layers[k];
        auto& gl = g.hidden[k];
        if (c.mask.size() > 0) da.array() *= c.mask.array();
        Matrix dy = (c.pre_relu.array() > 0.0).select(da, 0.0);
        Matrix dz;
        if (batch_norm_) {
            const auto n = static_cast<double>(dy.rows());
            gl.gamma = (dy.array() * c.normalized.array()).colwise().sum().transpose();
            gl.beta = dy.colwise().sum().transpose();
            Matrix dxhat = dy.array().rowwise() * l.gamma.transpose().array();
            const RowVector sum_dxhat = dxhat.colwise().sum();
            const RowVector sum_dxhat_xhat = (dxhat.array() * c.normalized.array()).colwise().sum();
            dz = n * dxhat;
            dz.rowwise() -= sum_dxhat;
            dz.array() -= c.normalized.array().rowwise() * sum_dxhat_xhat.array();
            dz.array().rowwise() *= (c.inv_std.transpose() / n).array();
        } else {
            dz = std::move(dy);
        }
        gl.weight = dz.transpose() * c.input;
        gl.bias = dz.colwise().sum().transpose();
        if (k > 0) da = dz * l.weight;
    }
    return g;
}

void MlpModel::expand_head(std::size_t n_new, std::uint64_t seed) {
    if (n_new == 0) throw std::invalid_argument("expand_head needs n_new >= 1");
    Rng rng(seed);
    const Matrix rows = gaussian(static_cast<Eigen::Index>(n_new), head_weight_.cols(), kHeadInitStd, rng);
    const Eigen::Index old = head_weight_.rows();
    head_weight_.conservativeResize(old + rows.rows(), Eigen::NoChange);
    head_weight_.bottomRows(rows.rows()) = rows;
    head_bias_.conservativeResize(old + rows.rows());
    head_bias_.tail(rows.rows()).setZero();
}

std::vector<std::span<double>> MlpModel::parameters() {
    std::vector<std::span<double>> out;
    for (auto& l : hidden_) {
        out.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
        out.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
        if (batch_norm_) {
            out.emplace_back(l.gamma.data(), static_cast<std::size_t>(l.gamma.size()));
            out.emplace_back(l.beta.data(), static_cast<std::size_t>(l.beta.size()));
        }
    }
    out.emplace_back(head_weight_.data(), static_cast<std::size_t>(head_weight_.size()));
    out.emplace_back(head_bias_.data(), static_cast<std::size_t>(head_bias_.size()));
    return out;
}

nlohmann::json MlpModel::to_json() const {
    nlohmann::json j;
    j["input_dim"] = input_dim_;
    j["hidden"] = hidden_widths();
    j["dropout_p"] = dropout_p_;
    j["batch_norm"] = batch_norm_;
    j["n_classes"] = n_classes();
    auto layers = nlohmann::json::array();
    for (const auto& l : hidden_) {
        nlohmann::json lj{{"weight", matrix_to_json(l.weight)}, {"bias", vector_to_json(l.bias)}};
        if (batch_norm_) {
            lj["gamma"] = vector_to_json(l.gamma);
            lj["beta"] = vector_to_json(l.beta);
            lj["running_mean"] = vector_to_json(l.running_mean);
            lj["running_var"] = vector_to_json(l.running_var);
        }
        layers.push_back(std::move(lj));
    }
    j["layers"] = std::move(layers);
    j["head_weight"] = matrix_to_json(head_weight_);
    j["head_bias"] = vector_to_json(head_bias_);
    return j;
}

MlpModel MlpModel::from_json(const nlohmann::json& j) {
    MlpModel m;
    m.input_dim_ = j.at("input_dim").get<std::size_t>();
    m.set_dropout_p(j.at("dropout_p").get<double>());
    m.batch_norm_ = j.at("batch_norm").get<bool>();
    std::size_t fan_in = m.input_dim_;
    for (const auto& lj : j.at("layers")) {
        HiddenLayer l;
        l.weight = matrix_from_json(lj.at("weight"));
        l.bias = vector_from_json(lj.at("bias"));
        if (static_cast<std::size_t>(l.weight.cols()) != fan_in || l.bias.size() != l.weight.rows()) {
            throw std::invalid_argument("checkpoint layer shapes do not chain");
        }
        if (m.batch_norm_) {
            l.gamma = vector_from_json(lj.at("gamma"));
            l.beta = vector_from_json(lj.at("beta"));
            l.running_mean = vector_from_json(lj.at("running_mean"));
            l.running_var = vector_from_json(lj.at("running_var"));
            if ((l.running_var.array() < 0.0).any()) throw std::invalid_argument("negative running variance");
        }
        fan_in = static_cast<std::size_t>(l.weight.rows());
        m.hidden_.push_back(std::move(l));
    }
    m.head_weight_ = matrix_from_json(j.at("head_weight"));
    m.head_bias_ = vector_from_json(j.at("head_bias"));
    if (static_cast<std::size_t>(m.head_weight_.cols()) != fan_in || m.head_bias_.size() != m.head_weight_.rows()) {
        throw std::invalid_argument("checkpoint head shape does not match the last hidden layer");
    }
    return m;
}

Matrix softmax_rows(const Matrix& logits, double temperature) {
    Matrix p = logits / temperature;
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        p.row(i).array() -= p.row(i).maxCoeff();
        p.row(i) = p.row(i).array().exp().matrix();
        p.row(i) /= p.row(i).sum();
    }
    return p;
}

LossAndGrad cross_entropy(const Matrix& logits, std::span<const int> labels) {
    if (static_cast<std::size_t>(logits.rows()) != labels.size()) {
        throw std::invalid_argument("logits rows and labels differ in length");
    }
    const auto n = static_cast<double>(logits.rows());
    LossAndGrad out;
    out.grad = softmax_rows(logits);
    double total = 0.0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        if (y < 0 || y >= logits.cols()) throw std::out_of_range("label out of range");
        const double m = logits.row(i).maxCoeff();
        const double lse = m + std::log((logits.row(i).array() - m).exp().sum());
        total += lse - logits(i, y);
        out.grad(i, y) -= 1.0;
    }
    out.loss = total / n;
    out.grad /= n;
    return out;
}

const char* to_string(DistillForm f) { return f == DistillForm::SigmoidBce ? "sigmoid_bce" : "softmax_t2"; }

LossAndGrad loss_distill(const Matrix& student, const Matrix& teacher, DistillForm form) {
    if (student.rows() != teacher.rows() || student.cols() != teacher.cols()) {
        throw std::invalid_argument("student and teacher logits differ in shape");
    }
    LossAndGrad out;
    out.grad = Matrix::Zero(student.rows(), student.cols());
    if (student.size() == 0) return out;
    const auto n = static_cast<double>(student.rows());

    if (form == DistillForm::SigmoidBce) {
        const double count = static_cast<double>(student.size());
        double total = 0.0;
        for (Eigen::Index j = 0; j < student.cols(); ++j) {
            for (Eigen::Index i = 0; i < student.rows(); ++i) {
                const double s = student(i, j);
                const double q = 1.0 / (1.0 + std::exp(-teacher(i, j)));
                total += std::max(s, 0.0) - s * q + std::log1p(std::exp(-std::abs(s)));
                out.grad(i, j) = (1.0 / (1.0 + std::exp(-s)) - q) / count;
            }
        }
        out.loss = total / count;
        return out;
    }

    constexpr double kT = 2.0;
    const Matrix pt = softmax_rows(teacher, kT);
    const Matrix ps = softmax_rows(student, kT);
    double total = 0.0;
    for (Eigen::Index i = 0; i < student.rows(); ++i) {
        const RowVector scaled = student.row(i) / kT;
        const double m = scaled.maxCoeff();
        const double lse = m + std::log((scaled.array() - m).exp().sum());
        total -= (pt.row(i).array() * (scaled.array() - lse)).sum();
    }
    out.loss = total / n;
    out.grad = (ps - pt) / (kT * n);
    return out;
}

PlateauScheduler::PlateauScheduler(double lr0, double factor, std::size_t patience, double threshold, double min_lr)
    : lr_(lr0),
      factor_(factor),
      patience_(patience),
      threshold_(threshold),
      min_lr_(min_lr),
      best_(std::numeric_limits<double>::infinity()) {}

double PlateauScheduler::step(double loss) {
    if (loss <= best_ - threshold_) {
        best_ = loss;
        bad_epochs_ = 0;
    } else if (++bad_epochs_ >= patience_) {
        lr_ = std::max(lr_ / factor_, min_lr_);
        bad_epochs_ = 0;
    }
    return lr_;
}

void TrainConfig::validate() const {
    if (!(lr0 > 0.0)) throw std::invalid_argument("lr0 must be positive");
    if (!(plateau_factor > 1.0)) throw std::invalid_argument("plateau_factor must exceed 1");
    if (batch_size < 2) throw std::invalid_argument("batch_size must be at least 2");
    if (min_lr < 0.0) throw std::invalid_argument("min_lr must be non-negative");
}

namespace {

struct AdamState {
    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEps = 1e-8;

    std::vector<std::vector<double>> m, v;
    std::size_t t = 0;

    void step(std::vector<std::span<double>>& params, const std::vector<std::span<const double>>& grads, double lr) {
        if (m.empty()) {
            for (const auto& p : params) {
                m.emplace_back(p.size(), 0.0);
                v.emplace_back(p.size(), 0.0);
            }
        }
        ++t;
        const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t));
        const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t));
        for (std::size_t k = 0; k < params.size(); ++k) {
            auto& p = params[k];
            const auto& g = grads[k];
            auto& mk = m[k];
            auto& vk = v[k];
            for (std::size_t i = 0; i < p.size(); ++i) {
                mk[i] = kBeta1 * mk[i] + (1.0 - kBeta1) * g[i];
                vk[i] = kBeta2 * vk[i] + (1.0 - kBeta2) * g[i] * g[i];
                p[i] -= lr * (mk[i] / c1) / (std::sqrt(vk[i] / c2) + kEps);
            }
        }
    }
};

Matrix gather_rows(const Matrix& src, std::span<const std::size_t> idx) {
    Matrix out(static_cast<Eigen::Index>(idx.size()), src.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = src.row(static_cast<Eigen::Index>(idx[i]));
    return out;
}

}  // namespace

TrainReport train_epochs(MlpModel& model, const TrainData& data, const TrainConfig& config, const MlpModel* teacher,
                         std::size_t old_class_count, const TrainData* validation) {
    config.validate();
    const auto start = std::chrono::steady_clock::now();
    TrainReport report;
    if (config.epochs == 0) return report;

    const std::size_t n = data.labels.size();
    if (n == 0 || data.features.rows() == 0) throw std::invalid_argument("training set is empty");
    if (static_cast<std::size_t>(data.features.rows()) != n) {
        throw std::invalid_argument("feature rows and labels differ in length");
    }
    const int n_classes = static_cast<int>(model.n_classes());
    for (int y : data.labels) {
        if (y < 0 || y >= n_classes) {
            throw std::out_of_range("label " + std::to_string(y) + " outside [0, " + std::to_string(n_classes) + ")");
        }
    }
    if (model.batch_norm() && n < 2) throw std::invalid_argument("batch norm training needs at least 2 samples");
    if (old_class_count > model.n_classes()) throw std::invalid_argument("old_class_count exceeds the head size");

    Matrix teacher_logits;
    const bool distill = teacher != nullptr && old_class_count > 0 && config.distill_weight != 0.0;
    if (distill) {
        if (teacher->n_classes() < old_class_count) throw std::invalid_argument("teacher head smaller than old_class_count");
        teacher_logits = teacher->predict(data.features).leftCols(static_cast<Eigen::Index>(old_class_count));
    }

    Rng rng(config.seed);
    model.reseed_dropout(derive_seed(config.seed, 0xd20b));
    model.set_mode(MlpModel::Mode::Train);
    PlateauScheduler scheduler(config.lr0, config.plateau_factor, config.plateau_patience, config.plateau_threshold,
                               config.min_lr);
    AdamState adam;
    auto params = model.parameters();

    std::vector<std::size_t> order(n);
    std::vector<int> batch_labels;
    ForwardCache cache;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        const double lr = scheduler.lr();
        double loss_sum = 0.0;
        std::size_t correct = 0;

        for (std::size_t begin = 0; begin < n;) {
            std::size_t end = std::min(n, begin + config.batch_size);
            // A trailing single sample joins the previous batch.
            if (n - end == 1) end = n;
            const std::span<const std::size_t> idx(order.data() + begin, end - begin);
            const Matrix xb = gather_rows(data.features, idx);
            batch_labels.resize(idx.size());
            for (std::size_t i = 0; i < idx.size(); ++i) batch_labels[i] = data.labels[idx[i]];

            const Matrix logits = model.forward(xb, &cache);
            LossAndGrad lg = cross_entropy(logits, batch_labels);
            double loss = lg.loss;
            if (distill) {
                const auto old = static_cast<Eigen::Index>(old_class_count);
                const LossAndGrad d =
                    loss_distill(logits.leftCols(old), gather_rows(teacher_logits, idx), config.distill_form);
                loss += config.distill_weight * d.loss;
                lg.grad.leftCols(old) += config.distill_weight * d.grad;
            }
            for (Eigen::Index i = 0; i < logits.rows(); ++i) {
                Eigen::Index arg = 0;
                logits.row(i).maxCoeff(&arg);
                if (arg == batch_labels[static_cast<std::size_t>(i)]) ++correct;
            }
            loss_sum += loss * static_cast<double>(idx.size());

            const ModelGradients grads = model.backward(cache, lg.grad);
            adam.step(params, grads.spans(), lr);
            begin = end;
        }

        const double epoch_loss = loss_sum / static_cast<double>(n);
        report.epochs.push_back({epoch_loss, static_cast<double>(correct) / static_cast<double>(n), lr});
        double monitored = epoch_loss;
        if (config.monitor_validation && validation != nullptr && !validation->labels.empty()) {
            monitored = cross_entropy(model.predict(validation->features), validation->labels).loss;
        }
        scheduler.step(monitored);
    }
    model.set_mode(MlpModel::Mode::Eval);
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

// ---------------------------------------------------------------------------
// Finite-difference oracle in extended precision.

namespace {

using Real = long double;
using MatR = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>;
using VecR = Eigen::Matrix<Real, Eigen::Dynamic, 1>;

struct OracleLayer {
    MatR w;
    VecR b, gamma, beta;
    // Cached base pass.
    MatR input, z, y, h;
};

class FiniteDifferenceOracle {
public:
    FiniteDifferenceOracle(const MlpModel& model, const Matrix& batch, std::span<const int> labels)
        : bn_(model.batch_norm()), labels_(labels.begin(), labels.end()) {
        for (const auto& l : model.hidden()) {
            OracleLayer o;
            o.w = l.weight.cast<Real>();
            o.b = l.bias.cast<Real>();
            if (bn_) {
                o.gamma = l.gamma.cast<Real>();
                o.beta = l.beta.cast<Real>();
            }
            layers_.push_back(std::move(o));
        }
        head_w_ = model.head_weight().cast<Real>();
        head_b_ = model.head_bias().cast<Real>();
        MatR a = batch.cast<Real>();
        for (auto& l : layers_) {
            l.input = a;
            l.z = a * l.w.transpose();
            l.z.rowwise() += l.b.transpose();
            l.y = l.z;
            for (Eigen::Index r = 0; r < l.z.cols(); ++r) l.y.col(r) = activate(l, r, l.z.col(r), 0, 0);
            l.h = l.y.cwiseMax(Real(0));
            a = l.h;
        }
        head_input_ = a;
        logits_ = head_input_ * head_w_.transpose();
        logits_.rowwise() += head_b_.transpose();
    }

    std::size_t depth() const { return layers_.size(); }
    const OracleLayer& layer(std::size_t k) const { return layers_[k]; }
    const MatR& head_input() const { return head_input_; }

    Real loss(const MatR& logits) const {
        Real total = 0;
        for (Eigen::Index i = 0; i < logits.rows(); ++i) {
            const Real m = logits.row(i).maxCoeff();
            Real s = 0;
            for (Eigen::Index j = 0; j < logits.cols(); ++j) s += std::exp(logits(i, j) - m);
            total += m + std::log(s) - logits(i, labels_[static_cast<std::size_t>(i)]);
        }
        return total / static_cast<Real>(logits.rows());
    }

    // Loss with hidden unit r of layer k driven by pre-activation column z
    // and batch-norm affine offsets (dgamma, dbeta).
    Real loss_with_unit(std::size_t k, Eigen::Index r, const VecR& z, Real dgamma, Real dbeta) const {
        const auto& l = layers_[k];
        const VecR h = activate(l, r, z, dgamma, dbeta).cwiseMax(Real(0));
        const VecR delta = h - l.h.col(r);
        if (k + 1 == layers_.size()) {
            MatR logits = logits_ + delta * head_w_.col(r).transpose();
            return loss(logits);
        }
        MatR z_next = layers_[k + 1].z + delta * layers_[k + 1].w.col(r).transpose();
        return loss(forward_from(k + 1, z_next));
    }

    Real loss_with_head_column(Eigen::Index j, const VecR& column) const {
        MatR logits = logits_;
        logits.col(j) = column;
        return loss(logits);
    }

    const MatR& logits() const { return logits_; }

private:
    VecR activate(const OracleLayer& l, Eigen::Index r, const VecR& z, Real dgamma, Real dbeta) const {
        if (!bn_) return z;
        const Real n = static_cast<Real>(z.size());
        const Real mean = z.sum() / n;
        const VecR centered = z.array() - mean;
        const Real var = centered.squaredNorm() / n;
        const Real inv = Real(1) / std::sqrt(var + static_cast<Real>(kBatchNormEps));
        return (centered * inv).array() * (l.gamma(r) + dgamma) + (l.beta(r) + dbeta);
    }

    MatR forward_from(std::size_t k, const MatR& z_k) const {
        MatR z = z_k;
        for (std::size_t i = k; i < layers_.size(); ++i) {
            const auto& l = layers_[i];
            if (i > k) {
                z = z * l.w.transpose();
                z.rowwise() += l.b.transpose();
            }
            if (bn_) {
                const Real n = static_cast<Real>(z.rows());
                const Eigen::Matrix<Real, 1, Eigen::Dynamic> mean = z.colwise().sum() / n;
                z.rowwise() -= mean;
                const Eigen::Matrix<Real, 1, Eigen::Dynamic> inv =
                    ((z.array().square().colwise().sum() / n) + static_cast<Real>(kBatchNormEps)).rsqrt();
                z.array().rowwise() *= (inv.array() * l.gamma.transpose().array());
                z.rowwise() += l.beta.transpose();
            }
            z = z.cwiseMax(Real(0));
        }
        MatR logits = z * head_w_.transpose();
        logits.rowwise() += head_b_.transpose();
        return logits;
    }

    bool bn_;
    std::vector<int> labels_;
    std::vector<OracleLayer> layers_;
    MatR head_w_;
    VecR head_b_;
    MatR head_input_;
    MatR logits_;
};

double relative_error(double analytic, Real numeric) {
    const double num = static_cast<double>(numeric);
    return std::abs(analytic - num) / std::max(1e-8, std::abs(analytic) + std::abs(num));
}

}  // namespace

double grad_check(const MlpModel& model, const Matrix& batch, std::span<const int> labels, const GradientTamper& tamper) {
    MlpModel work = model;
    work.set_dropout_p(0.0);
    work.set_mode(MlpModel::Mode::Train);
    ForwardCache cache;
    const Matrix logits = work.forward(batch, &cache);
    ModelGradients grads = work.backward(cache, cross_entropy(logits, labels).grad);
    if (tamper) tamper(grads);

    const FiniteDifferenceOracle oracle(model, batch, labels);
    const Real h = 1e-5L;
    double worst = 0.0;
    auto central = [&](auto&& eval) { return (eval(h) - eval(-h)) / (2 * h); };

    for (std::size_t k = 0; k < oracle.depth(); ++k) {
        const auto& l = oracle.layer(k);
        const auto& g = grads.hidden[k];
        for (Eigen::Index r = 0; r < l.w.rows(); ++r) {
            const VecR z = l.z.col(r);
            for (Eigen::Index c = 0; c < l.w.cols(); ++c) {
                const VecR x = l.input.col(c);
                const Real num = central([&](Real d) { return oracle.loss_with_unit(k, r, z + d * x, 0, 0); });
                worst = std::max(worst, relative_error(g.weight(r, c), num));
            }
            const Real nb = central([&](Real d) { return oracle.loss_with_unit(k, r, (z.array() + d).matrix(), 0, 0); });
            worst = std::max(worst, relative_error(g.bias(r), nb));
            if (model.batch_norm()) {
                const Real ng = central([&](Real d) { return oracle.loss_with_unit(k, r, z, d, 0); });
                const Real nbeta = central([&](Real d) { return oracle.loss_with_unit(k, r, z, 0, d); });
                worst = std::max(worst, relative_error(g.gamma(r), ng));
                worst = std::max(worst, relative_error(g.beta(r), nbeta));
            }
        }
    }
    const MatR& hin = oracle.head_input();
    for (Eigen::Index j = 0; j < model.head_weight().rows(); ++j) {
        const VecR col = oracle.logits().col(j);
        for (Eigen::Index c = 0; c < model.head_weight().cols(); ++c) {
            const VecR x = hin.col(c);
            const Real num = central([&](Real d) { return oracle.loss_with_head_column(j, col + d * x); });
            worst = std::max(worst, relative_error(grads.head_weight(j, c), num));
        }
        const Real nb = central([&](Real d) { return oracle.loss_with_head_column(j, (col.array() + d).matrix()); });
        worst = std::max(worst, relative_error(grads.head_bias(j), nb));
    }
    return worst;
}

void save_model(const std::filesystem::path& path, const MlpModel& model, const std::vector<std::string>& classes) {
    nlohmann::json j;
    j["format"] = "hagil-model";
    j["version"] = 1;
    j["model"] = model.to_json();
    j["classes"] = classes;
    write_file_atomic(path, j.dump());
}

ModelCheckpoint load_model(const std::filesystem::path& path) {
    const auto j = nlohmann::json::parse(read_file(path));
    if (j.value("format", std::string{}) != "hagil-model") {
        throw std::invalid_argument(path.string() + " is not a model checkpoint");
    }
    return {MlpModel::from_json(j.at("model")), j.at("classes").get<std::vector<std::string>>()};
}

}  // namespace hagil
