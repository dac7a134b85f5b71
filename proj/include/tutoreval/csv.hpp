#pragma once

#include <initializer_list>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace tutoreval::csv {

/// Minimal RFC-4180 writer: fields containing commas, quotes, or newlines are
/// quoted, quotes doubled. Rows end with '\n'.
class Writer {
public:
    void row(const std::vector<std::string>& fields) {
        bool first = true;
        for (const auto& f : fields) {
            if (!first) out_ << ',';
            first = false;
            out_ << escape(f);
        }
        out_ << '\n';
    }

    void row(std::initializer_list<std::string> fields) {
        row(std::vector<std::string>(fields));
    }

    std::string str() const { return out_.str(); }

    static std::string escape(std::string_view field) {
        bool needs_quotes = field.find_first_of(",\"\n\r") != std::string_view::npos;
        if (!needs_quotes) return std::string(field);
        std::string out = "\"";
        for (char c : field) {
            if (c == '"') out += "\"\"";
            else out.push_back(c);
        }
        out += '"';
        return out;
    }

private:
    std::ostringstream out_;
};

} // namespace tutoreval::csv
