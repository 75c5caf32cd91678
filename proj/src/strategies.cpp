#include "hagil/strategies.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <stdexcept>

#include "hagil/io_util.hpp"

namespace hagil {

namespace {

// Stream ids for seeds derived from LearnerConfig::seed.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kMemoryStream = 2;
constexpr std::uint64_t kTrainStream = 100;
constexpr std::uint64_t kExpandStream = 10000;

Matrix row_matrix(std::span<const double> v) {
    return Eigen::Map<const RowVector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

int argmax_lowest(std::span<const double> v) {
    int best = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
    }
    return best;
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
    return {{"lr0", c.lr0},
            {"plateau_factor", c.plateau_factor},
            {"plateau_patience", c.plateau_patience},
            {"plateau_threshold", c.plateau_threshold},
            {"min_lr", c.min_lr},
            {"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"seed", c.seed},
            {"distill_weight", c.distill_weight},
            {"monitor_validation", c.monitor_validation}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
    c.lr0 = j.value("lr0", c.lr0);
    c.plateau_factor = j.value("plateau_factor", c.plateau_factor);
    c.plateau_patience = j.value("plateau_patience", c.plateau_patience);
    c.plateau_threshold = j.value("plateau_threshold", c.plateau_threshold);
    c.min_lr = j.value("min_lr", c.min_lr);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.distill_weight = j.value("distill_weight", c.distill_weight);
    c.monitor_validation = j.value("monitor_validation", c.monitor_validation);
    return c;
}

nlohmann::json matrix_rows_json(const Matrix& m) {
    auto rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        std::vector<double> r(static_cast<std::size_t>(m.cols()));
        for (Eigen::Index k = 0; k < m.cols(); ++k) r[static_cast<std::size_t>(k)] = m(i, k);
        rows.push_back(std::move(r));
    }
    return rows;
}

Matrix matrix_from_rows_json(const nlohmann::json& j) {
    const auto rows = j.get<std::vector<std::vector<double>>>();
    if (rows.empty()) return {};
    Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != rows.front().size()) throw std::invalid_argument("ragged feature rows");
        for (std::size_t k = 0; k < rows[i].size(); ++k) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
    }
    return m;
}

nlohmann::json int_map_json(const std::map<int, double>& m) {
    auto j = nlohmann::json::array();
    for (const auto& [k, v] : m) j.push_back({k, v});
    return j;
}

std::map<int, double> int_map_from_json(const nlohmann::json& j) {
    std::map<int, double> m;
    for (const auto& e : j) m[e.at(0).get<int>()] = e.at(1).get<double>();
    return m;
}

}  // namespace

const char* to_string(StrategyKind k) {
    switch (k) {
        case StrategyKind::Joint: return "joint";
        case StrategyKind::FineTune: return "finetune";
        case StrategyKind::LwF: return "lwf";
        case StrategyKind::ICaRL: return "icarl";
        case StrategyKind::IL2M: return "il2m";
    }
    return "?";
}

StrategyKind strategy_from_string(const std::string& s) {
    std::string lower(s);
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    for (auto k : {StrategyKind::Joint, StrategyKind::FineTune, StrategyKind::LwF, StrategyKind::ICaRL, StrategyKind::IL2M}) {
        if (lower == to_string(k)) return k;
    }
    if (lower == "hagil") return StrategyKind::ICaRL;
    throw std::invalid_argument("unknown strategy '" + s + "' (expected joint, finetune, lwf, icarl or il2m)");
}

bool uses_memory(StrategyKind k) { return k == StrategyKind::ICaRL || k == StrategyKind::IL2M; }

nlohmann::json Il2mStats::to_json() const {
    auto intro = nlohmann::json::array();
    for (const auto& [k, v] : intro_task) intro.push_back({k, v});
    return {{"mu_init", int_map_json(mu_init)}, {"mu_cur", int_map_json(mu_cur)}, {"intro_task", intro}, {"conf", conf}};
}

Il2mStats Il2mStats::from_json(const nlohmann::json& j) {
    Il2mStats s;
    s.mu_init = int_map_from_json(j.at("mu_init"));
    s.mu_cur = int_map_from_json(j.at("mu_cur"));
    for (const auto& e : j.at("intro_task")) s.intro_task[e.at(0).get<int>()] = e.at(1).get<int>();
    s.conf = j.at("conf").get<std::vector<double>>();
    return s;
}

std::vector<double> il2m_rectify(std::span<const double> scores, const Il2mStats& stats, int task) {
    if (scores.empty()) throw std::invalid_argument("il2m_rectify needs scores");
    double sum = 0.0;
    for (double s : scores) sum += s;
    if (std::abs(sum - 1.0) > 1e-6) throw std::invalid_argument("il2m_rectify expects a probability vector");
    if (task < 0 || static_cast<std::size_t>(task) >= stats.conf.size()) {
        throw std::invalid_argument("no confidence statistic for task " + std::to_string(task));
    }
    for (std::size_t c = 0; c < scores.size(); ++c) {
        const int id = static_cast<int>(c);
        if (!stats.intro_task.count(id) || !stats.mu_init.count(id) || !stats.mu_cur.count(id)) {
            throw std::invalid_argument("missing IL2M statistics for class " + std::to_string(id));
        }
    }
    std::vector<double> out(scores.begin(), scores.end());
    const int winner = argmax_lowest(scores);
    if (stats.intro_task.at(winner) != task) return out;

    const double conf_now = std::max(stats.conf[static_cast<std::size_t>(task)], kIl2mMinStat);
    for (std::size_t c = 0; c < out.size(); ++c) {
        const int id = static_cast<int>(c);
        const int intro = stats.intro_task.at(id);
        if (intro == task) continue;
        const double mu_init = std::max(stats.mu_init.at(id), kIl2mMinStat);
        const double mu_cur = std::max(stats.mu_cur.at(id), kIl2mMinStat);
        const double conf_then = std::max(stats.conf.at(static_cast<std::size_t>(intro)), kIl2mMinStat);
        out[c] *= (mu_init / mu_cur) * (conf_now / conf_then);
    }
    return out;
}

Prediction nem_classify(const Vector& query, const std::vector<ClassMean>& means) {
    if (means.empty()) throw std::invalid_argument("nem_classify needs class means");
    Prediction p;
    p.scores.reserve(means.size());
    double best = 0.0;
    for (const auto& cm : means) {
        if (cm.mean.size() != query.size()) throw std::invalid_argument("class mean and query differ in dimension");
        const double d = (query - cm.mean).norm();
        p.scores.push_back(-d);
        if (p.class_id < 0 || d < best || (d == best && cm.class_id < p.class_id)) {
            best = d;
            p.class_id = cm.class_id;
        }
    }
    return p;
}

LearnerConfig::LearnerConfig() {
    initial.epochs = 50;
    incremental.epochs = 15;
}

nlohmann::json LearnerConfig::to_json() const {
    return {{"strategy", hagil::to_string(strategy)},
            {"encoding", hagil::to_string(encoding)},
            {"hidden", hidden},
            {"dropout_p", dropout_p},
            {"batch_norm", batch_norm},
            {"initial", train_config_to_json(initial)},
            {"incremental", train_config_to_json(incremental)},
            {"exemplars_per_class", exemplars_per_class},
            {"selection", hagil::to_string(selection)},
            {"normalize_herding", normalize_herding},
            {"distillation", distillation},
            {"nem", nem},
            {"joint_from_scratch", joint_from_scratch},
            {"seed", seed}};
}

LearnerConfig LearnerConfig::from_json(const nlohmann::json& j) {
    LearnerConfig c;
    c.strategy = strategy_from_string(j.at("strategy").get<std::string>());
    c.encoding = encoding_from_string(j.at("encoding").get<std::string>());
    c.hidden = j.at("hidden").get<std::vector<std::size_t>>();
    c.dropout_p = j.at("dropout_p").get<double>();
    c.batch_norm = j.at("batch_norm").get<bool>();
    c.initial = train_config_from_json(j.at("initial"), c.initial);
    c.incremental = train_config_from_json(j.at("incremental"), c.incremental);
    c.exemplars_per_class = j.at("exemplars_per_class").get<std::size_t>();
    c.selection = selection_from_string(j.at("selection").get<std::string>());
    c.normalize_herding = j.at("normalize_herding").get<bool>();
    c.distillation = j.at("distillation").get<bool>();
    c.nem = j.at("nem").get<bool>();
    c.joint_from_scratch = j.at("joint_from_scratch").get<bool>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

Learner::Learner(LearnerConfig config) : config_(std::move(config)) {
    if (uses_memory(config_.strategy)) {
        memory_ = ExemplarMemory(config_.exemplars_per_class, config_.selection, derive_seed(config_.seed, kMemoryStream),
                                 config_.normalize_herding);
    }
}

Architecture Learner::architecture(std::size_t input_dim) const {
    return {input_dim, config_.hidden, config_.dropout_p, config_.batch_norm};
}

TrainConfig Learner::task_config(const TrainConfig& base) const {
    TrainConfig c = base;
    c.seed = derive_seed(config_.seed, kTrainStream + static_cast<std::uint64_t>(task_ + 1));
    c.distill_form = config_.strategy == StrategyKind::LwF ? DistillForm::SoftmaxT2 : DistillForm::SigmoidBce;
    return c;
}

void Learner::check_new_classes(const std::vector<ClassData>& classes) const {
    std::set<std::string> names;
    std::size_t dim = initialized_ ? model_.input_dim() : 0;
    for (const auto& c : classes) {
        if (c.features.rows() == 0) throw std::invalid_argument("class '" + c.name + "' has no training data");
        if (seen_.contains(c.name) || !names.insert(c.name).second) {
            throw std::invalid_argument("class '" + c.name + "' was already learned");
        }
        if (dim == 0) dim = static_cast<std::size_t>(c.features.cols());
        if (static_cast<std::size_t>(c.features.cols()) != dim) {
            throw std::invalid_argument("class '" + c.name + "' has feature width " + std::to_string(c.features.cols()) +
                                        ", expected " + std::to_string(dim));
        }
    }
}

TrainData Learner::pool_with_exemplars(const std::vector<ClassData>& fresh, std::size_t first_new_id) const {
    Eigen::Index rows = 0;
    for (const auto& c : fresh) rows += c.features.rows();
    const bool rehearse = uses_memory(config_.strategy) && !memory_.empty();
    if (rehearse) rows += static_cast<Eigen::Index>(memory_.size());

    TrainData pool;
    pool.features.resize(rows, static_cast<Eigen::Index>(model_.input_dim()));
    Eigen::Index at = 0;
    for (std::size_t k = 0; k < fresh.size(); ++k) {
        const auto& f = fresh[k].features;
        pool.features.middleRows(at, f.rows()) = f;
        pool.labels.insert(pool.labels.end(), static_cast<std::size_t>(f.rows()), static_cast<int>(first_new_id + k));
        at += f.rows();
    }
    if (rehearse) {
        for (int c : memory_.classes()) {
            const Matrix& ex = memory_.exemplars(c);
            pool.features.middleRows(at, ex.rows()) = ex;
            pool.labels.insert(pool.labels.end(), static_cast<std::size_t>(ex.rows()), c);
            at += ex.rows();
        }
    }
    return pool;
}

void Learner::learn_initial(const std::vector<ClassData>& classes) {
    if (initialized_) throw std::logic_error("learner is already initialized");
    if (classes.size() < 2) throw std::invalid_argument("the initial task needs at least 2 classes");
    check_new_classes(classes);

    for (const auto& c : classes) seen_.add(c.name);
    const auto input_dim = static_cast<std::size_t>(classes.front().features.cols());
    model_ = MlpModel(architecture(input_dim), classes.size(), derive_seed(config_.seed, kInitStream));
    if (config_.strategy == StrategyKind::Joint) retained_ = classes;

    const TrainData pool = pool_with_exemplars(classes, 0);
    last_report_ = train_epochs(model_, pool, task_config(config_.initial));
    task_ = 0;
    initialized_ = true;
    after_task(classes, 0);
}

void Learner::learn_increment(const std::vector<ClassData>& classes) {
    if (!initialized_) throw std::logic_error("learn_increment called before learn_initial");
    if (classes.empty()) throw std::invalid_argument("learn_increment needs at least one class");
    check_new_classes(classes);

    const std::size_t old_count = seen_.size();
    for (const auto& c : classes) seen_.add(c.name);
    const std::uint64_t expand_seed = derive_seed(config_.seed, kExpandStream + static_cast<std::uint64_t>(task_ + 1));
    TrainConfig cfg = task_config(config_.incremental);
    ++task_;

    const MlpModel* teacher = nullptr;
    TrainData pool;
    switch (config_.strategy) {
        case StrategyKind::FineTune:
            model_.expand_head(classes.size(), expand_seed);
            pool = pool_with_exemplars(classes, old_count);
            break;
        case StrategyKind::LwF:
            model_.expand_head(classes.size(), expand_seed);
            pool = pool_with_exemplars(classes, old_count);
            teacher = &*teacher_;
            break;
        case StrategyKind::ICaRL:
            model_.expand_head(classes.size(), expand_seed);
            pool = pool_with_exemplars(classes, old_count);
            if (config_.distillation) teacher = &*teacher_;
            break;
        case StrategyKind::IL2M:
            model_.expand_head(classes.size(), expand_seed);
            pool = pool_with_exemplars(classes, old_count);
            break;
        case StrategyKind::Joint: {
            for (const auto& c : classes) retained_.push_back(c);
            if (config_.joint_from_scratch) {
                model_ = MlpModel(architecture(model_.input_dim()), seen_.size(), derive_seed(config_.seed, kInitStream));
            } else {
                model_.expand_head(classes.size(), expand_seed);
            }
            pool = pool_with_exemplars(retained_, 0);
            break;
        }
    }
    last_report_ = train_epochs(model_, pool, cfg, teacher, teacher ? old_count : 0);
    after_task(classes, old_count);
}

void Learner::after_task(const std::vector<ClassData>& fresh, std::size_t first_new_id) {
    if (uses_memory(config_.strategy)) {
        for (std::size_t k = 0; k < fresh.size(); ++k) {
            memory_.update(static_cast<int>(first_new_id + k), fresh[k].features, model_);
        }
    }
    if (config_.strategy == StrategyKind::IL2M) record_il2m(fresh, first_new_id);
    if (config_.strategy == StrategyKind::ICaRL) means_ = class_means(memory_, model_);
    teacher_ = model_;
}

void Learner::record_il2m(const std::vector<ClassData>& fresh, std::size_t first_new_id) {
    double top_sum = 0.0;
    Eigen::Index top_count = 0;
    for (std::size_t k = 0; k < fresh.size(); ++k) {
        const int id = static_cast<int>(first_new_id + k);
        const Matrix p = softmax_rows(model_.predict(fresh[k].features));
        il2m_.mu_init[id] = p.col(id).mean();
        il2m_.intro_task[id] = task_;
        top_sum += p.rowwise().maxCoeff().sum();
        top_count += p.rows();
    }
    if (il2m_.conf.size() != static_cast<std::size_t>(task_)) throw std::logic_error("IL2M confidence history out of step");
    il2m_.conf.push_back(top_sum / static_cast<double>(top_count));
    for (int c : memory_.classes()) {
        const Matrix p = softmax_rows(model_.predict(memory_.exemplars(c)));
        il2m_.mu_cur[c] = p.col(c).mean();
    }
}

int Learner::argmax_prediction(const RowVector& logits, Prediction* out) const {
    const Matrix p = softmax_rows(logits);
    std::vector<double> scores(p.data(), p.data() + p.size());
    if (config_.strategy == StrategyKind::IL2M) scores = il2m_rectify(scores, il2m_, task_);
    const int id = argmax_lowest(scores);
    if (out) {
        out->class_id = id;
        out->scores = std::move(scores);
    }
    return id;
}

Prediction Learner::classify(std::span<const double> features) const {
    if (!initialized_) throw std::logic_error("classify called on an untrained learner");
    if (features.size() != model_.input_dim()) {
        throw std::invalid_argument("feature width " + std::to_string(features.size()) + " does not match the model input " +
                                    std::to_string(model_.input_dim()));
    }
    const Matrix x = row_matrix(features);
    Prediction p;
    if (config_.strategy == StrategyKind::ICaRL && config_.nem) {
        return nem_classify(model_.embed(x).row(0).transpose(), means_);
    }
    argmax_prediction(model_.predict(x).row(0), &p);
    return p;
}

Prediction Learner::classify(const FeatureVector& feature) const {
    if (feature.encoding != config_.encoding) {
        throw std::invalid_argument(std::string("feature uses encoding ") + to_string(feature.encoding) + ", learner expects " +
                                    to_string(config_.encoding));
    }
    return classify(std::span<const double>(feature.values));
}

Prediction Learner::classify(const HandFrame& frame) const { return classify(encode(frame, config_.encoding)); }

std::vector<int> Learner::classify_batch(const Matrix& features) const {
    if (!initialized_) throw std::logic_error("classify called on an untrained learner");
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(features.rows()));
    if (config_.strategy == StrategyKind::ICaRL && config_.nem) {
        const Matrix e = model_.embed(features);
        for (Eigen::Index i = 0; i < e.rows(); ++i) out.push_back(nem_classify(e.row(i).transpose(), means_).class_id);
        return out;
    }
    const Matrix logits = model_.predict(features);
    for (Eigen::Index i = 0; i < logits.rows(); ++i) out.push_back(argmax_prediction(logits.row(i), nullptr));
    return out;
}

nlohmann::json Learner::to_json() const {
    nlohmann::json j;
    j["format"] = "hagil-learner";
    j["version"] = 1;
    j["config"] = config_.to_json();
    j["initialized"] = initialized_;
    j["task"] = task_;
    j["classes"] = seen_.names();
    if (initialized_) j["model"] = model_.to_json();
    if (teacher_) j["teacher"] = teacher_->to_json();
    if (uses_memory(config_.strategy)) j["memory"] = memory_.to_json();
    if (config_.strategy == StrategyKind::IL2M) j["il2m"] = il2m_.to_json();
    if (!retained_.empty()) {
        auto r = nlohmann::json::array();
        for (const auto& c : retained_) r.push_back({{"name", c.name}, {"features", matrix_rows_json(c.features)}});
        j["retained"] = std::move(r);
    }
    return j;
}

Learner Learner::from_json(const nlohmann::json& j) {
    if (j.value("format", std::string{}) != "hagil-learner") throw std::invalid_argument("not a learner checkpoint");
    Learner l(LearnerConfig::from_json(j.at("config")));
    l.initialized_ = j.at("initialized").get<bool>();
    l.task_ = j.at("task").get<int>();
    for (const auto& name : j.at("classes").get<std::vector<std::string>>()) l.seen_.add(name);
    if (l.initialized_) {
        l.model_ = MlpModel::from_json(j.at("model"));
        if (l.model_.n_classes() != l.seen_.size()) throw std::invalid_argument("checkpoint head does not match its classes");
    }
    if (j.contains("teacher")) l.teacher_ = MlpModel::from_json(j.at("teacher"));
    if (j.contains("memory")) l.memory_ = ExemplarMemory::from_json(j.at("memory"));
    if (j.contains("il2m")) l.il2m_ = Il2mStats::from_json(j.at("il2m"));
    if (j.contains("retained")) {
        for (const auto& r : j.at("retained")) {
            l.retained_.push_back({r.at("name").get<std::string>(), matrix_from_rows_json(r.at("features"))});
        }
    }
    if (l.initialized_ && l.config_.strategy == StrategyKind::ICaRL) l.means_ = class_means(l.memory_, l.model_);
    return l;
}

void Learner::save(const std::filesystem::path& path) const { write_file_atomic(path, to_json().dump()); }

Learner Learner::load(const std::filesystem::path& path) { return from_json(nlohmann::json::parse(read_file(path))); }

}  // namespace hagil
