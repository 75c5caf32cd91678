#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include <json.hpp>

#include "hagil/tinynet.hpp"

namespace hagil {

enum class Selection { Herding, Random };

const char* to_string(Selection s);
Selection selection_from_string(const std::string& s);

/// Greedy herding over the rows of `embeddings`: step k picks the unused row
/// whose inclusion brings the running mean of the k picks closest to the
/// mean of all rows. Ties go to the lowest index. Returns min(m, rows)
/// indices in selection order.
std::vector<std::size_t> herd_select(const Matrix& embeddings, std::size_t m);

struct ClassMean {
    int class_id = 0;
    Vector mean;  // unit norm unless the raw mean is zero
    std::size_t count = 0;
};

/// Per-class rehearsal memory holding encoded inputs (not embeddings), so
/// means can be recomputed as the network changes.
class ExemplarMemory {
public:
    ExemplarMemory() = default;
    ExemplarMemory(std::size_t per_class, Selection selection, std::uint64_t seed = 0,
                   bool normalize_embeddings = true);

    std::size_t per_class() const { return per_class_; }
    Selection selection() const { return selection_; }

    /// Selects up to per_class() exemplars of `class_id` from `features`
    /// (rows) using the model's embedding space, replacing any previous entry.
    void update(int class_id, const Matrix& features, const MlpModel& model);

    bool contains(int class_id) const { return store_.count(class_id) != 0; }
    const Matrix& exemplars(int class_id) const;
    std::vector<int> classes() const;
    std::size_t size() const;
    bool empty() const { return store_.empty(); }

    nlohmann::json to_json() const;
    static ExemplarMemory from_json(const nlohmann::json& j);

    bool operator==(const ExemplarMemory& o) const;

private:
    std::size_t per_class_ = 5;
    Selection selection_ = Selection::Herding;
    std::uint64_t seed_ = 0;
    bool normalize_embeddings_ = true;
    std::map<int, Matrix> store_;
};

/// Mean embedding of each class's exemplars under the current model, L2-normalized.
std::vector<ClassMean> class_means(const ExemplarMemory& memory, const MlpModel& model);

}  // namespace hagil
