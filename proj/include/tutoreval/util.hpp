#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace tutoreval::util {

// 64-bit FNV-1a. Stable across platforms, used for content addressing.
std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = 0xcbf29ce484222325ULL);

/// 32-hex-char content key built from two independent FNV-1a passes.
std::string content_key(std::string_view data);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);

/// Write via a sibling temp file + rename so concurrent readers never see a
/// partial entry.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

/// Calls `fn(line, line_number)` for every line (1-based, trailing newline
/// optional, blank lines skipped).
void for_each_line(const std::filesystem::path& path,
                   const std::function<void(std::string_view, std::size_t)>& fn);

/// Runs of whitespace become a single space; leading/trailing stripped.
std::string collapse_whitespace(std::string_view text);

std::string trim(std::string_view text);

bool starts_with(std::string_view text, std::string_view prefix);

/// Seconds (possibly fractional) since the Unix epoch for an ISO-8601 instant
/// such as "2024-09-12T08:30:00Z" or "2024-09-12T08:30:00.250+02:00".
/// Returns nullopt if the string does not parse.
std::optional<double> parse_iso8601(std::string_view text);

/// "1970-01-01T00:00:00Z" style rendering of whole seconds since the epoch.
std::string format_iso8601(std::int64_t epoch_seconds);

/// printf-style "%.*f" with deterministic output.
std::string format_fixed(double value, int decimals);

/// Shortest round-trip decimal for doubles (used in CSV payloads).
std::string format_double(double value);

std::string to_lower(std::string_view text);

std::string replace_all(std::string text, std::string_view from, std::string_view to);

} // namespace tutoreval::util
