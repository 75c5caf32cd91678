#include "hagil/features.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <stdexcept>

namespace hagil {

namespace {

constexpr std::size_t kN = kNumLandmarks;
constexpr std::size_t kPairs = kN * (kN - 1) / 2;

// Unordered pairs (i, j), i < j, row-major over i then j.
double* all_diff(const HandFrame& f, double* out) {
    for (std::size_t i = 0; i < kN; ++i) {
        for (std::size_t j = i + 1; j < kN; ++j) {
            *out++ = f.landmarks[i].x - f.landmarks[j].x;
            *out++ = f.landmarks[i].y - f.landmarks[j].y;
        }
    }
    return out;
}

double* all_euclidean(const HandFrame& f, double* out) {
    for (std::size_t i = 0; i < kN; ++i) {
        for (std::size_t j = i + 1; j < kN; ++j) {
            *out++ = std::hypot(f.landmarks[i].x - f.landmarks[j].x, f.landmarks[i].y - f.landmarks[j].y);
        }
    }
    return out;
}

double* wrist_diff(const HandFrame& f, double* out) {
    const auto& w = f.landmarks[kWristIndex];
    for (std::size_t j = 1; j < kN; ++j) {
        *out++ = f.landmarks[j].x - w.x;
        *out++ = f.landmarks[j].y - w.y;
    }
    return out;
}

}  // namespace

std::size_t encoding_dim(Encoding e) {
    switch (e) {
        case Encoding::Raw2D: return kN * 2;
        case Encoding::Raw3D: return kN * 3;
        case Encoding::WristDiff: return (kN - 1) * 2;
        case Encoding::WristEuclidean: return kN - 1;
        case Encoding::AllEuclidean: return kPairs;
        case Encoding::AllDiff: return kPairs * 2;
        case Encoding::Combined: return kPairs + (kN - 1) * 2 + kPairs * 2;
    }
    throw std::invalid_argument("unknown encoding");
}

const char* to_string(Encoding e) {
    switch (e) {
        case Encoding::Raw2D: return "Raw2D";
        case Encoding::Raw3D: return "Raw3D";
        case Encoding::WristDiff: return "WristDiff";
        case Encoding::WristEuclidean: return "WristEuclidean";
        case Encoding::AllEuclidean: return "AllEuclidean";
        case Encoding::AllDiff: return "AllDiff";
        case Encoding::Combined: return "Combined";
    }
    return "?";
}

Encoding encoding_from_string(const std::string& s) {
    std::string lower(s);
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    if (lower == "raw") return Encoding::Raw2D;
    for (auto e : kAllEncodings) {
        std::string name(to_string(e));
        std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::tolower(c); });
        if (name == lower) return e;
    }
    throw std::invalid_argument("unknown encoding '" + s + "'");
}

void encode_into(const HandFrame& f, Encoding encoding, double* out) {
    switch (encoding) {
        case Encoding::Raw2D:
            for (const auto& p : f.landmarks) {
                *out++ = p.x;
                *out++ = p.y;
            }
            return;
        case Encoding::Raw3D:
            for (const auto& p : f.landmarks) {
                *out++ = p.x;
                *out++ = p.y;
                *out++ = p.z;
            }
            return;
        case Encoding::WristDiff:
            wrist_diff(f, out);
            return;
        case Encoding::WristEuclidean: {
            const auto& w = f.landmarks[kWristIndex];
            for (std::size_t j = 1; j < kN; ++j) {
                *out++ = std::hypot(f.landmarks[j].x - w.x, f.landmarks[j].y - w.y);
            }
            return;
        }
        case Encoding::AllEuclidean:
            all_euclidean(f, out);
            return;
        case Encoding::AllDiff:
            all_diff(f, out);
            return;
        case Encoding::Combined:
            out = all_euclidean(f, out);
            out = wrist_diff(f, out);
            all_diff(f, out);
            return;
    }
}

FeatureVector encode(const HandFrame& frame, Encoding encoding) {
    FeatureVector fv{encoding, std::vector<double>(encoding_dim(encoding))};
    encode_into(frame, encoding, fv.values.data());
    return fv;
}

}  // namespace hagil
