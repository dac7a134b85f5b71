#pragma once

#include <array>
#include <string_view>

namespace tutoreval {

/// One pedagogical rubric axis: the question put to the judge and the meaning
/// of each integer label 1..3.
struct DimensionInfo {
    std::string_view name;
    std::string_view question;
    std::array<std::string_view, 3> labels;
};

/// The eight rubric dimensions in canonical (report row) order.
const std::array<DimensionInfo, 8>& dimension_info();

/// Canonical dimension names in the same order.
std::array<std::string_view, 8> dimension_names();

bool is_dimension_name(std::string_view name);

} // namespace tutoreval
