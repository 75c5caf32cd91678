#include "hagil/rehearsal.hpp"

#include <algorithm>
#include <cctype>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace hagil {

const char* to_string(Selection s) { return s == Selection::Herding ? "herding" : "random"; }

Selection selection_from_string(const std::string& s) {
    std::string lower(s);
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    if (lower == "herding") return Selection::Herding;
    if (lower == "random") return Selection::Random;
    throw std::invalid_argument("unknown exemplar selection '" + s + "' (expected herding or random)");
}

std::vector<std::size_t> herd_select(const Matrix& embeddings, std::size_t m) {
    if (embeddings.rows() == 0) throw std::invalid_argument("herd_select needs at least one embedding");
    if (m == 0) throw std::invalid_argument("herd_select needs m >= 1");
    const auto n = static_cast<std::size_t>(embeddings.rows());
    const std::size_t take = std::min(m, n);
    const RowVector mu = embeddings.colwise().mean();

    std::vector<std::size_t> chosen;
    std::vector<bool> used(n, false);
    RowVector running = RowVector::Zero(embeddings.cols());
    for (std::size_t k = 1; k <= take; ++k) {
        const double inv_k = 1.0 / static_cast<double>(k);
        std::size_t best = n;
        double best_dist = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < n; ++i) {
            if (used[i]) continue;
            const double d = (mu - (running + embeddings.row(static_cast<Eigen::Index>(i))) * inv_k).squaredNorm();
            if (d < best_dist) {
                best_dist = d;
                best = i;
            }
        }
        used[best] = true;
        chosen.push_back(best);
        running += embeddings.row(static_cast<Eigen::Index>(best));
    }
    return chosen;
}

ExemplarMemory::ExemplarMemory(std::size_t per_class, Selection selection, std::uint64_t seed,
                               bool normalize_embeddings)
    : per_class_(per_class), selection_(selection), seed_(seed), normalize_embeddings_(normalize_embeddings) {
    if (per_class == 0) throw std::invalid_argument("exemplar memory needs at least one slot per class");
}

void ExemplarMemory::update(int class_id, const Matrix& features, const MlpModel& model) {
    if (features.rows() == 0) throw std::invalid_argument("memory update needs class features");
    std::vector<std::size_t> picks;
    if (selection_ == Selection::Herding) {
        picks = herd_select(model.embed(features, normalize_embeddings_), per_class_);
    } else {
        picks.resize(static_cast<std::size_t>(features.rows()));
        std::iota(picks.begin(), picks.end(), std::size_t{0});
        Rng rng(derive_seed(seed_, static_cast<std::uint64_t>(class_id)));
        std::shuffle(picks.begin(), picks.end(), rng);
        picks.resize(std::min(per_class_, picks.size()));
    }
    Matrix stored(static_cast<Eigen::Index>(picks.size()), features.cols());
    for (std::size_t i = 0; i < picks.size(); ++i) {
        stored.row(static_cast<Eigen::Index>(i)) = features.row(static_cast<Eigen::Index>(picks[i]));
    }
    store_[class_id] = std::move(stored);
}

const Matrix& ExemplarMemory::exemplars(int class_id) const {
    auto it = store_.find(class_id);
    if (it == store_.end()) throw std::out_of_range("no exemplars stored for class " + std::to_string(class_id));
    return it->second;
}

std::vector<int> ExemplarMemory::classes() const {
    std::vector<int> out;
    for (const auto& [c, _] : store_) out.push_back(c);
    return out;
}

std::size_t ExemplarMemory::size() const {
    std::size_t n = 0;
    for (const auto& [_, m] : store_) n += static_cast<std::size_t>(m.rows());
    return n;
}

bool ExemplarMemory::operator==(const ExemplarMemory& o) const {
    if (per_class_ != o.per_class_ || selection_ != o.selection_ || seed_ != o.seed_ ||
        normalize_embeddings_ != o.normalize_embeddings_ || store_.size() != o.store_.size()) {
        return false;
    }
    for (const auto& [c, m] : store_) {
        auto it = o.store_.find(c);
        if (it == o.store_.end() || it->second.rows() != m.rows() || it->second.cols() != m.cols() ||
            it->second != m) {
            return false;
        }
    }
    return true;
}

nlohmann::json ExemplarMemory::to_json() const {
    nlohmann::json j;
    j["per_class"] = per_class_;
    j["selection"] = to_string(selection_);
    j["seed"] = seed_;
    j["normalize_embeddings"] = normalize_embeddings_;
    auto classes = nlohmann::json::array();
    for (const auto& [c, m] : store_) {
        auto rows = nlohmann::json::array();
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            std::vector<double> r(static_cast<std::size_t>(m.cols()));
            for (Eigen::Index k = 0; k < m.cols(); ++k) r[static_cast<std::size_t>(k)] = m(i, k);
            rows.push_back(std::move(r));
        }
        classes.push_back({{"class", c}, {"exemplars", std::move(rows)}});
    }
    j["classes"] = std::move(classes);
    return j;
}

ExemplarMemory ExemplarMemory::from_json(const nlohmann::json& j) {
    ExemplarMemory mem(j.at("per_class").get<std::size_t>(), selection_from_string(j.at("selection").get<std::string>()),
                       j.at("seed").get<std::uint64_t>(), j.at("normalize_embeddings").get<bool>());
    for (const auto& cj : j.at("classes")) {
        const auto rows = cj.at("exemplars").get<std::vector<std::vector<double>>>();
        if (rows.empty()) throw std::invalid_argument("stored class without exemplars");
        Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].size() != rows.front().size()) throw std::invalid_argument("ragged exemplar rows");
            for (std::size_t k = 0; k < rows[i].size(); ++k) {
                m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
            }
        }
        mem.store_[cj.at("class").get<int>()] = std::move(m);
    }
    return mem;
}

std::vector<ClassMean> class_means(const ExemplarMemory& memory, const MlpModel& model) {
    if (memory.empty()) throw std::invalid_argument("class_means needs a non-empty memory");
    std::vector<ClassMean> out;
    for (int c : memory.classes()) {
        const Matrix& ex = memory.exemplars(c);
        if (ex.rows() == 0) throw std::invalid_argument("class " + std::to_string(c) + " has no exemplars");
        Vector mean = model.embed(ex).colwise().mean().transpose();
        const double norm = mean.norm();
        if (norm > 0.0) mean /= norm;
        out.push_back({c, std::move(mean), static_cast<std::size_t>(ex.rows())});
    }
    return out;
}

}  // namespace hagil
