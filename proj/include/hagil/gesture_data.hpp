#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace hagil {

inline constexpr std::size_t kNumLandmarks = 21;
inline constexpr std::size_t kWristIndex = 0;

// Accepted coordinate range for x and y. Detectors extrapolate slightly
// out of frame, anything further out is treated as corrupt.
inline constexpr double kMinCoord = -0.5;
inline constexpr double kMaxCoord = 1.5;

struct Landmark {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    bool operator==(const Landmark&) const = default;
};

enum class Handedness { Left, Right };

const char* to_string(Handedness h);
Handedness handedness_from_string(const std::string& s);

struct HandFrame {
    std::array<Landmark, kNumLandmarks> landmarks{};
    Handedness handedness = Handedness::Right;
    std::string subject;
    std::string label;

    bool operator==(const HandFrame&) const = default;
};

/// Throws std::invalid_argument if a coordinate is non-finite or x/y is
/// outside [kMinCoord, kMaxCoord].
void validate_frame(const HandFrame& frame);

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Ordered class-name registry; ids are dense and follow insertion order.
class ClassRegistry {
public:
    int add(const std::string& name);
    int id(const std::string& name) const;
    bool contains(const std::string& name) const { return ids_.count(name) != 0; }
    const std::string& name(int id) const { return names_.at(static_cast<std::size_t>(id)); }
    std::size_t size() const { return names_.size(); }
    const std::vector<std::string>& names() const { return names_; }

    bool operator==(const ClassRegistry& o) const { return names_ == o.names_; }

private:
    std::vector<std::string> names_;
    std::map<std::string, int> ids_;
};

class GestureDataset {
public:
    GestureDataset() = default;
    explicit GestureDataset(std::vector<HandFrame> frames);
    GestureDataset(std::vector<HandFrame> frames, ClassRegistry classes);

    const std::vector<HandFrame>& frames() const { return frames_; }
    const ClassRegistry& classes() const { return classes_; }
    std::set<std::string> subjects() const;
    std::size_t size() const { return frames_.size(); }
    bool empty() const { return frames_.empty(); }

    int class_id(const HandFrame& f) const { return classes_.id(f.label); }
    std::vector<const HandFrame*> frames_of(int class_id) const;

    bool operator==(const GestureDataset&) const = default;

private:
    std::vector<HandFrame> frames_;
    ClassRegistry classes_;
};

struct LoadOptions {
    // Reflect left hands (x -> 1 - x) so every sample looks like a right hand.
    bool mirror_left = false;
};

GestureDataset load_dataset(const std::filesystem::path& path, const LoadOptions& opts = {});
/// Loads several files in order into one dataset (registry in first-appearance order).
GestureDataset load_datasets(const std::vector<std::filesystem::path>& paths,
                             const LoadOptions& opts = {});
void save_dataset(const GestureDataset& ds, const std::filesystem::path& path);

HandFrame parse_frame_line(const std::string& line);
std::string format_frame_line(const HandFrame& frame);

enum class SplitRole { Train, Val, Test };

const char* to_string(SplitRole r);
SplitRole split_role_from_string(const std::string& s);

struct SubjectSplit {
    std::map<std::string, SplitRole> assignment;

    /// Sorted subjects: all but the last two go to train, then one val and
    /// one test. Two subjects give train/test, a single subject is train only.
    static SubjectSplit default_for(const std::set<std::string>& subjects);
};

struct SplitDatasets {
    GestureDataset train;
    GestureDataset val;
    GestureDataset test;
};

SplitDatasets split_by_subject(const GestureDataset& ds, const SubjectSplit& split);

struct SynthConfig {
    std::size_t n_classes = 10;
    std::size_t samples_per_class = 30;
    double jitter_std = 0.02;
    std::size_t n_subjects = 3;
    std::uint64_t seed = 0;

    void validate() const;
};

GestureDataset synth_gestures(const SynthConfig& cfg);

}  // namespace hagil
