#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace redcell {

std::string sha256_hex(const void* data, std::size_t size);
std::string sha256_hex(const std::string& data);
std::string sha256_hex_file(const std::filesystem::path& path);

std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const void* data, std::size_t size);

} // namespace redcell
