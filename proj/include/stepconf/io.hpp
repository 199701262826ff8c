#pragma once

#include <filesystem>
#include <string>

namespace stepconf {

std::string read_file(const std::filesystem::path& path);

// Writes to a sibling temp file, then renames over the target, so readers
// never observe a partially written file and reruns stay byte-identical.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

}  // namespace stepconf
