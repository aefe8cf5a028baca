#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace ifmmin::io {

// Writes to a sibling temp file and renames it over the target.
void atomic_write(const std::filesystem::path& path, std::string_view contents);

// Throws ValidationError naming the path when it cannot be read.
std::string read_file(const std::filesystem::path& path);

std::string sha1_hex(std::string_view bytes);
std::string fnv1a_hex(std::string_view bytes);

}  // namespace ifmmin::io
