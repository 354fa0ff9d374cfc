#pragma once

#include <string>
#include <string_view>

namespace cotsm::harness {

std::string sha256_hex(std::string_view bytes);
// Hash of a file's bytes; DependencyError when it cannot be read.
std::string sha256_file(const std::string& path);

}  // namespace cotsm::harness
