#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace kneedet {

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
std::string read_file_text(const std::filesystem::path& path);

// Writes to <path>.tmp and renames over the target.
void write_file_atomic(const std::filesystem::path& path,
                       const void* data, std::size_t size);
void write_file_atomic(const std::filesystem::path& path, const std::string& text);
void write_file_atomic(const std::filesystem::path& path,
                       const std::vector<std::uint8_t>& bytes);

// Shortest decimal form that parses back to exactly the same double.
std::string format_double_exact(double v);

// printf %.6g, the 6-significant-digit form used by the text formats.
std::string format_double_6g(double v);

}  // namespace kneedet
