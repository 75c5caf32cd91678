#pragma once

#include <filesystem>
#include <string>

namespace hagil {

/// Writes to a sibling temp file and renames it into place, so readers
/// never observe a partially written file.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

std::string read_file(const std::filesystem::path& path);

/// Shortest decimal form with at least 9 significant digits of precision.
std::string format_number(double v);

/// Round-trip exact decimal form (17 significant digits).
std::string format_exact(double v);

}  // namespace hagil
