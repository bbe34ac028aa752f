#pragma once

// Dataset container file: a JSON header (config, seed, counts) followed by
// raw little-endian records per scene. Versioned; readers reject mismatches.

#include <string>

#include "msod/synthworld.hpp"

namespace msod {

void write_dataset(const Dataset& ds, const std::string& path);
Dataset read_dataset(const std::string& path);

}  // namespace msod
