#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "xom/elf_image.hpp"

namespace xom {

struct FrameDescription {
    Address initial_location = 0;
    std::uint64_t address_range = 0;
    std::uint64_t record_offset = 0; // offset of the FDE within the frame section
};

/// Walks CIE/FDE records of an .eh_frame image loaded at `section_vaddr`.
/// Stops at a zero terminator or the end of `data`; records with
/// encodings it cannot resolve statically are skipped.
std::vector<FrameDescription> parse_eh_frame(std::span<const std::uint8_t> data, Address section_vaddr);

/// FDEs of the image, located via the .eh_frame section or, when section
/// headers are missing, via PT_GNU_EH_FRAME. Empty when neither exists.
std::vector<FrameDescription> frame_descriptions(const BinaryImage &image);

} // namespace xom
