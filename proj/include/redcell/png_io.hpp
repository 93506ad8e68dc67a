#pragma once

#include <filesystem>

#include "redcell/gateway.hpp"

namespace redcell {

/// 8-bit grayscale PNG with fixed encoder settings, so one matrix always
/// maps to one byte sequence. Values are quantized linearly over the given
/// pixel range.
void write_gray8_png(const std::filesystem::path& path, const Image& image,
                     const PixelRange& range = {});

/// Inverse of write_gray8_png up to the 8-bit quantization.
Image read_gray8_png(const std::filesystem::path& path, const PixelRange& range = {});

/// The matrix that a write/read round trip would produce, without touching
/// the filesystem.
Image quantize_gray8(const Image& image, const PixelRange& range = {});

} // namespace redcell
