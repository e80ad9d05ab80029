#pragma once

#include <string>

#include "slidenav/checkpoint.hpp"
#include "slidenav/fusion.hpp"

namespace slidenav {

void save_mcfn(const McfnParams& params, const std::string& path,
               const std::string& config_hash);

/// Restores parameters bitwise; shape or name drift raises validation errors.
McfnParams load_mcfn(const std::string& path, std::string* config_hash = nullptr);

}  // namespace slidenav
