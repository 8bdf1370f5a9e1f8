#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace rprobe::io {

namespace fs = std::filesystem;
using Json = nlohmann::json;

// Calls fn(line_index, object) for each non-blank line. Throws ParseError on
// invalid JSON.
void for_each_jsonl(const fs::path& path, const std::function<void(std::size_t, const Json&)>& fn);

void write_jsonl(const fs::path& path, const std::vector<Json>& rows);

// Writes to a sibling temp file and renames over the target, so readers see
// either the old or the new content.
void write_file_atomic(const fs::path& path, std::string_view contents);

std::string read_file(const fs::path& path);

// Minimal RFC 4180 CSV: fields containing a comma, quote or newline are quoted.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    // Index of the named column; throws ParseError when absent.
    std::size_t column(std::string_view name) const;
};

std::string csv_escape(std::string_view field);
std::string csv_line(const std::vector<std::string>& fields);
CsvTable read_csv(const fs::path& path);

// Shortest round-trippable decimal form.
std::string format_double(double value);

// Little-endian binary helpers.
void put_u32(std::ostream& os, std::uint32_t v);
void put_u64(std::ostream& os, std::uint64_t v);
void put_string(std::ostream& os, std::string_view s);
void put_f32s(std::ostream& os, const float* data, std::size_t n);

bool get_u32(std::istream& is, std::uint32_t& v);
bool get_u64(std::istream& is, std::uint64_t& v);
bool get_string(std::istream& is, std::string& s, std::uint32_t max_len = 1u << 20);
bool get_f32s(std::istream& is, float* data, std::size_t n);

std::string hex64(std::uint64_t v);

}  // namespace rprobe::io
