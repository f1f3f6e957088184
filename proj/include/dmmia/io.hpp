#ifndef DMMIA_IO_HPP
#define DMMIA_IO_HPP

#include <cstdint>
#include <string>
#include <vector>

namespace dmmia {

std::vector<std::uint8_t> read_file_bytes(const std::string& path);

// Writes to `<path>.tmp` then renames, so a failed run never leaves a
// truncated artifact at the destination.
void write_file_atomic(const std::string& path, const void* data, std::size_t n);
void write_file_atomic(const std::string& path, const std::string& text);

void ensure_dir(const std::string& path);

}  // namespace dmmia

#endif
