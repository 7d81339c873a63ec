#pragma once

#include <string>

#include "mops/render.hpp"

namespace mops::render {

void write_png(const std::string& path, const Observation& obs);

}  // namespace mops::render
