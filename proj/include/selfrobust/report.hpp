#pragma once

#include <string>

#include "selfrobust/config.hpp"

namespace selfrobust {

inline constexpr int kReportSchema = 1;
inline constexpr const char* kCodeVersion = "0.1.0";

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);
void ensure_dir(const std::string& path);

// Shortest decimal that round-trips the double, for CSV cells.
std::string csv_number(double v);
std::string hex64(std::uint64_t v);

// manifest.json: config hash, seed, code version, wall-clock timestamp.
// The timestamp is the one field reruns are allowed to differ in.
void write_manifest(const std::string& dir, const ExperimentConfig& cfg);

// Human-readable digest of <run_dir>/report.json.
std::string summarize_report(const std::string& run_dir);

}  // namespace selfrobust
