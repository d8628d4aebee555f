#pragma once

#include <filesystem>
#include <string>

namespace ftm {

std::string read_file(const std::filesystem::path& path);

/// Writes through a sibling temp file and renames it into place, so readers
/// never observe a partially written file.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

/// Worker count from FTMKIT_THREADS, else the hardware concurrency.
int default_thread_count();

}  // namespace ftm
