#include "tutoreval/dimensions.hpp"

#include <algorithm>

namespace tutoreval {

const std::array<DimensionInfo, 8>& dimension_info() {
    static const std::array<DimensionInfo, 8> info = {{
        {"mistake_identification",
         "Has the tutor identified or recognized a mistake in the student's response?",
         {"Yes", "To some extent", "No"}},
        {"mistake_location",
         "Does the tutor's response accurately point to a genuine mistake and its location?",
         {"Yes", "To some extent", "No"}},
        {"revealing_answer",
         "Does the tutor reveal the final answer (whether correct or not)?",
         {"Yes (correct)", "Yes (incorrect)", "No"}},
        {"providing_guidance",
         "Does the tutor offer correct and relevant guidance, such as an explanation, "
         "elaboration, hint, or examples?",
         {"Yes", "To some extent", "No"}},
        {"actionability",
         "Is it clear from the tutor's feedback what the student should do next?",
         {"Yes", "To some extent", "No"}},
        {"coherence",
         "Is the tutor's response logically consistent with the student's previous responses?",
         {"Yes", "To some extent", "No"}},
        {"tutor_tone",
         "Is the tutor's response encouraging, neutral, or offensive?",
         {"Encouraging", "Neutral", "Offensive"}},
        {"humanness",
         "Does the tutor's response sound natural rather than robotic or artificial?",
         {"Yes", "To some extent", "No"}},
    }};
    return info;
}

std::array<std::string_view, 8> dimension_names() {
    std::array<std::string_view, 8> names;
    const auto& info = dimension_info();
    std::transform(info.begin(), info.end(), names.begin(),
                   [](const DimensionInfo& d) { return d.name; });
    return names;
}

bool is_dimension_name(std::string_view name) {
    const auto& info = dimension_info();
    return std::any_of(info.begin(), info.end(),
                       [&](const DimensionInfo& d) { return d.name == name; });
}

} // namespace tutoreval
