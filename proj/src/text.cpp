#include "regisforge/text.hpp"

#include <charconv>
#include <cctype>

namespace regisforge::text {

std::string join_escaped(const std::vector<std::string>& parts, char sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        for (char c : parts[i]) {
            if (c == sep || c == '\\') out += '\\';
            out += c;
        }
    }
    return out;
}

std::vector<std::string> split_escaped(std::string_view joined, char sep) {
    std::vector<std::string> parts(1);
    for (std::size_t i = 0; i < joined.size(); ++i) {
        char c = joined[i];
        if (c == '\\' && i + 1 < joined.size()) {
            parts.back() += joined[++i];
        } else if (c == sep) {
            parts.emplace_back();
        } else {
            parts.back() += c;
        }
    }
    return parts;
}

std::string standardize(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool pending_space = false;
    for (unsigned char c : s) {
        if (std::isspace(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) {
            out += ' ';
            pending_space = false;
        }
        out += static_cast<char>(std::tolower(c));
    }
    return out;
}

std::string format_double(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

}  // namespace regisforge::text
