#pragma once

#include "fmu/image.hpp"

#include <string>

namespace fmu {

// Reads 8-bit gray / gray+alpha / RGB / RGBA PNGs (alpha is dropped).
RawImage read_png(const std::string& path);

// Writes RGB as an uncompressed (stored-block) PNG; output bytes depend only
// on the pixel content.
void write_png(const std::string& path, const RawImage& img);

}  // namespace fmu
