#pragma once

#include <array>
#include <string>
#include <vector>

#include "hagil/gesture_data.hpp"

namespace hagil {

enum class Encoding {
    Raw2D,
    Raw3D,
    WristDiff,
    WristEuclidean,
    AllEuclidean,
    AllDiff,
    Combined,  // AllEuclidean ++ WristDiff ++ AllDiff
};

inline constexpr std::array<Encoding, 7> kAllEncodings = {
    Encoding::Raw2D,        Encoding::Raw3D,   Encoding::WristDiff, Encoding::WristEuclidean,
    Encoding::AllEuclidean, Encoding::AllDiff, Encoding::Combined};

/// Output length: 42, 63, 40, 20, 210, 420 and 670 respectively.
/// AllDiff and AllEuclidean walk landmark pairs (i, j), i < j, row-major.
std::size_t encoding_dim(Encoding e);
const char* to_string(Encoding e);
/// Case-insensitive; also accepts "raw" for Raw2D.
Encoding encoding_from_string(const std::string& s);

struct FeatureVector {
    Encoding encoding = Encoding::Combined;
    std::vector<double> values;
};

FeatureVector encode(const HandFrame& frame, Encoding encoding);

/// Writes the encoding to `out`, which must hold encoding_dim(encoding) values.
void encode_into(const HandFrame& frame, Encoding encoding, double* out);

}  // namespace hagil
