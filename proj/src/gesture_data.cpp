#include "hagil/gesture_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "hagil/io_util.hpp"
#include "hagil/random.hpp"

namespace hagil {

using ordered_json = nlohmann::ordered_json;

const char* to_string(Handedness h) { return h == Handedness::Left ? "Left" : "Right"; }

Handedness handedness_from_string(const std::string& s) {
    if (s == "Left") return Handedness::Left;
    if (s == "Right") return Handedness::Right;
    throw std::invalid_argument("unknown handedness '" + s + "' (expected Left or Right)");
}

void validate_frame(const HandFrame& frame) {
    for (std::size_t i = 0; i < kNumLandmarks; ++i) {
        const auto& p = frame.landmarks[i];
        if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z)) {
            throw std::invalid_argument("landmark " + std::to_string(i) + " has a non-finite coordinate");
        }
        if (p.x < kMinCoord || p.x > kMaxCoord || p.y < kMinCoord || p.y > kMaxCoord) {
            throw std::invalid_argument("landmark " + std::to_string(i) +
                                        " lies outside [-0.5, 1.5]");
        }
    }
}

int ClassRegistry::add(const std::string& name) {
    auto it = ids_.find(name);
    if (it != ids_.end()) return it->second;
    const int id = static_cast<int>(names_.size());
    names_.push_back(name);
    ids_.emplace(name, id);
    return id;
}

int ClassRegistry::id(const std::string& name) const {
    auto it = ids_.find(name);
    if (it == ids_.end()) throw std::out_of_range("unknown class '" + name + "'");
    return it->second;
}

GestureDataset::GestureDataset(std::vector<HandFrame> frames) : frames_(std::move(frames)) {
    for (const auto& f : frames_) classes_.add(f.label);
}

GestureDataset::GestureDataset(std::vector<HandFrame> frames, ClassRegistry classes)
    : frames_(std::move(frames)), classes_(std::move(classes)) {
    for (const auto& f : frames_) {
        if (!classes_.contains(f.label)) {
            throw std::invalid_argument("frame label '" + f.label + "' missing from class registry");
        }
    }
}

std::set<std::string> GestureDataset::subjects() const {
    std::set<std::string> out;
    for (const auto& f : frames_) out.insert(f.subject);
    return out;
}

std::vector<const HandFrame*> GestureDataset::frames_of(int class_id) const {
    std::vector<const HandFrame*> out;
    const auto& name = classes_.name(class_id);
    for (const auto& f : frames_) {
        if (f.label == name) out.push_back(&f);
    }
    return out;
}

HandFrame parse_frame_line(const std::string& line) {
    const auto j = nlohmann::json::parse(line);
    if (!j.is_object()) throw std::invalid_argument("record is not a JSON object");
    HandFrame f;
    f.subject = j.at("subject").get<std::string>();
    f.label = j.at("label").get<std::string>();
    f.handedness = handedness_from_string(j.at("hand").get<std::string>());
    const auto& lms = j.at("landmarks");
    if (!lms.is_array()) throw std::invalid_argument("'landmarks' is not an array");
    if (lms.size() != kNumLandmarks) {
        throw std::invalid_argument("expected 21 landmarks, got " + std::to_string(lms.size()));
    }
    for (std::size_t i = 0; i < kNumLandmarks; ++i) {
        const auto& p = lms[i];
        if (!p.is_array() || p.size() != 3) {
            throw std::invalid_argument("landmark " + std::to_string(i) + " is not an [x, y, z] triple");
        }
        for (const auto& v : p) {
            if (!v.is_number()) {
                throw std::invalid_argument("landmark " + std::to_string(i) + " has a non-numeric coordinate");
            }
        }
        f.landmarks[i] = {p[0].get<double>(), p[1].get<double>(), p[2].get<double>()};
    }
    validate_frame(f);
    return f;
}

std::string format_frame_line(const HandFrame& frame) {
    ordered_json j;
    j["subject"] = frame.subject;
    j["label"] = frame.label;
    j["hand"] = to_string(frame.handedness);
    auto lms = ordered_json::array();
    for (const auto& p : frame.landmarks) lms.push_back({p.x, p.y, p.z});
    j["landmarks"] = std::move(lms);
    return j.dump();
}

namespace {

void append_file(const std::filesystem::path& path, const LoadOptions& opts,
                 std::vector<HandFrame>& frames) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open landmark file " + path.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        try {
            auto f = parse_frame_line(line);
            if (opts.mirror_left && f.handedness == Handedness::Left) {
                for (auto& p : f.landmarks) p.x = 1.0 - p.x;
            }
            frames.push_back(std::move(f));
        } catch (const std::exception& e) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

}  // namespace

GestureDataset load_dataset(const std::filesystem::path& path, const LoadOptions& opts) {
    return load_datasets({path}, opts);
}

GestureDataset load_datasets(const std::vector<std::filesystem::path>& paths, const LoadOptions& opts) {
    std::vector<HandFrame> frames;
    for (const auto& p : paths) append_file(p, opts, frames);
    return GestureDataset(std::move(frames));
}

void save_dataset(const GestureDataset& ds, const std::filesystem::path& path) {
    std::string body;
    for (const auto& f : ds.frames()) {
        body += format_frame_line(f);
        body += '\n';
    }
    write_file_atomic(path, body);
}

const char* to_string(SplitRole r) {
    switch (r) {
        case SplitRole::Train: return "train";
        case SplitRole::Val: return "val";
        case SplitRole::Test: return "test";
    }
    return "?";
}

SplitRole split_role_from_string(const std::string& s) {
    if (s == "train") return SplitRole::Train;
    if (s == "val") return SplitRole::Val;
    if (s == "test") return SplitRole::Test;
    throw std::invalid_argument("unknown split role '" + s + "' (expected train, val or test)");
}

SubjectSplit SubjectSplit::default_for(const std::set<std::string>& subjects) {
    SubjectSplit split;
    const std::vector<std::string> sorted(subjects.begin(), subjects.end());
    const std::size_t n = sorted.size();
    for (std::size_t i = 0; i < n; ++i) {
        SplitRole role = SplitRole::Train;
        if (n >= 3) {
            if (i == n - 2) role = SplitRole::Val;
            if (i == n - 1) role = SplitRole::Test;
        } else if (n == 2 && i == 1) {
            role = SplitRole::Test;
        }
        split.assignment.emplace(sorted[i], role);
    }
    return split;
}

SplitDatasets split_by_subject(const GestureDataset& ds, const SubjectSplit& split) {
    std::vector<std::string> missing;
    for (const auto& s : ds.subjects()) {
        if (!split.assignment.count(s)) missing.push_back(s);
    }
    if (!missing.empty()) {
        std::string msg = "subjects without a split assignment:";
        for (const auto& s : missing) msg += " " + s;
        throw std::invalid_argument(msg);
    }
    std::vector<HandFrame> train, val, test;
    for (const auto& f : ds.frames()) {
        switch (split.assignment.at(f.subject)) {
            case SplitRole::Train: train.push_back(f); break;
            case SplitRole::Val: val.push_back(f); break;
            case SplitRole::Test: test.push_back(f); break;
        }
    }
    return {GestureDataset(std::move(train), ds.classes()), GestureDataset(std::move(val), ds.classes()),
            GestureDataset(std::move(test), ds.classes())};
}

void SynthConfig::validate() const {
    if (n_classes < 2) throw std::invalid_argument("synthetic dataset needs n_classes >= 2");
    if (samples_per_class < 1) throw std::invalid_argument("synthetic dataset needs samples_per_class >= 1");
    if (!(jitter_std >= 0.0) || !std::isfinite(jitter_std)) {
        throw std::invalid_argument("jitter_std must be finite and >= 0");
    }
    if (n_subjects < 1) throw std::invalid_argument("synthetic dataset needs n_subjects >= 1");
}

GestureDataset synth_gestures(const SynthConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    std::uniform_real_distribution<double> proto_coord(0.1, 0.9);
    std::normal_distribution<double> noise(0.0, 1.0);

    std::vector<std::array<Landmark, kNumLandmarks>> prototypes(cfg.n_classes);
    for (auto& proto : prototypes) {
        for (auto& p : proto) {
            p.x = proto_coord(rng);
            p.y = proto_coord(rng);
            p.z = 0.0;
        }
    }

    std::vector<HandFrame> frames;
    frames.reserve(cfg.n_classes * cfg.samples_per_class);
    for (std::size_t c = 0; c < cfg.n_classes; ++c) {
        char label[32];
        std::snprintf(label, sizeof label, "g%02zu", c);
        for (std::size_t k = 0; k < cfg.samples_per_class; ++k) {
            HandFrame f;
            f.label = label;
            f.subject = "s" + std::to_string(k % cfg.n_subjects);
            f.handedness = Handedness::Right;
            for (std::size_t i = 0; i < kNumLandmarks; ++i) {
                const auto& p = prototypes[c][i];
                // Always draw both values so the stream does not depend on jitter_std.
                const double dx = noise(rng) * cfg.jitter_std;
                const double dy = noise(rng) * cfg.jitter_std;
                f.landmarks[i].x = std::clamp(p.x + dx, kMinCoord, kMaxCoord);
                f.landmarks[i].y = std::clamp(p.y + dy, kMinCoord, kMaxCoord);
                f.landmarks[i].z = 0.0;
            }
            frames.push_back(std::move(f));
        }
    }
    return GestureDataset(std::move(frames));
}

}  // namespace hagil
