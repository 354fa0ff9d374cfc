#pragma once

#include <cstddef>
#include <string>

namespace cotsm {

// Shape of one named parameter tensor belonging to group `step`.
struct ParamSlot {
    std::size_t step = 0;
    std::string name;
    std::size_t rows = 0;
    std::size_t cols = 0;
    friend bool operator==(const ParamSlot&, const ParamSlot&) = default;
};

}  // namespace cotsm
