#ifndef CURE_PERSISTENCE_HPP
#define CURE_PERSISTENCE_HPP

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cure/training.hpp"

namespace cure {

/// Column layout of RunLog CSV files; see schemas/runlog.v1.txt.
inline constexpr int kRunLogSchemaVersion = 1;

[[nodiscard]] std::string runlog_csv(const RunLog& log);
void write_runlog_csv(const std::filesystem::path& path, const RunLog& log);
[[nodiscard]] RunLog read_runlog_csv(const std::filesystem::path& path);

/// Two-decimal rendering used for every accuracy written to disk or stdout.
[[nodiscard]] std::string fmt_acc(double value);
/// Round-trip rendering for other reals.
[[nodiscard]] std::string fmt_real(double value);

/// Rows of string cells; the first row is the header.
using Table = std::vector<std::vector<std::string>>;

void write_table_csv(const std::filesystem::path& path, const Table& table);

/// Flat metric name -> value summary.
void write_summary_json(const std::filesystem::path& path, const std::vector<std::pair<std::string, double>>& metrics);

void write_text(const std::filesystem::path& path, const std::string& text);
[[nodiscard]] std::string read_text(const std::filesystem::path& path);

[[nodiscard]] std::string sha256_hex(const std::string& bytes);
[[nodiscard]] std::string sha256_file(const std::filesystem::path& path);

/// MANIFEST.json in `dir` listing the given files (relative to `dir`) with
/// size and SHA-256, sorted by path.
void write_manifest(const std::filesystem::path& dir, std::vector<std::string> files);

struct ManifestEntry {
    std::string path;
    std::uintmax_t size{0};
    std::string sha256;
};

[[nodiscard]] std::vector<ManifestEntry> read_manifest(const std::filesystem::path& dir);

/// Relative paths whose current hash or size differs from the manifest, or
/// which have gone missing.
[[nodiscard]] std::vector<std::string> verify_manifest(const std::filesystem::path& dir);

inline constexpr const char* kManifestName = "MANIFEST.json";

} // namespace cure

#endif // CURE_PERSISTENCE_HPP
