#pragma once

#include <string>

#include "clotseg/volume.hpp"

namespace clotseg {

// MVOL multimodal volume file: magic "MVOL", u32 version=1, u16 modality
// count, u16 mask count, u32 X,Y,Z, f32 spacing[3], then per modality
// channel: name (u8 length + UTF-8), u8 presence, f32 little-endian
// row-major data; then per mask channel the same header with u8 data.

void write_mvol(const Volume& vol, const std::string& path);
Volume read_mvol(const std::string& path);

}  // namespace clotseg
