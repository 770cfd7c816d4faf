#pragma once

#include <charconv>
#include <string>

#include "cardlab/schema.hpp"

namespace cardlab {

// Shortest round-trip decimal form, so emitted files are byte-stable.
inline std::string format_number(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

inline std::string format_value(const Schema& schema, AttrRef ref, double v) {
    if (is_discrete(schema.attribute(ref).kind))
        return std::to_string(static_cast<long long>(v));
    return format_number(v);
}

}  // namespace cardlab
