#pragma once

// 8-bit PNG ingestion/emission plus the raw float32 sidecar used to carry
// full-precision probability maps next to their quantized previews.

#include "coedge/core.hpp"

#include <filesystem>

namespace coedge {

// Reads an 8-bit PNG as RGB planes scaled to [0,1]. Grayscale files are
// replicated across channels; alpha is dropped.
std::array<PlaneF, 3> read_png_rgb(const std::filesystem::path& path);

// Reads an 8-bit PNG as a single plane in [0,1] (RGB inputs are averaged).
PlaneF read_png_gray(const std::filesystem::path& path);

void write_png_rgb(const std::filesystem::path& path,
                   const std::array<PlaneF, 3>& rgb);
void write_png_gray(const std::filesystem::path& path, const PlaneF& gray);

// Little-endian float32 sidecar: magic "CEDF", int32 h, int32 w, h*w floats.
void write_f32_sidecar(const std::filesystem::path& path, const PlaneF& map);
PlaneF read_f32_sidecar(const std::filesystem::path& path);

}  // namespace coedge
