#include "regisforge/date.hpp"

#include <charconv>
#include <cstdio>

#include "regisforge/error.hpp"

namespace regisforge {

using namespace std::chrono;

namespace {

bool parse_digits(std::string_view s, int& out) {
    for (char c : s) {
        if (c < '0' || c > '9') return false;
    }
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && p == s.data() + s.size();
}

}  // namespace

Date Date::from_ymd(int y, unsigned m, unsigned d) {
    std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
    if (!ymd.ok()) {
        throw Error(Errc::malformed_date, "invalid calendar date " + std::to_string(y) + "-" +
                                              std::to_string(m) + "-" + std::to_string(d));
    }
    return Date{sys_days{ymd}};
}

Date Date::parse(std::string_view iso) {
    int y = 0, m = 0, d = 0;
    if (iso.size() != 10 || iso[4] != '-' || iso[7] != '-' || !parse_digits(iso.substr(0, 4), y) ||
        !parse_digits(iso.substr(5, 2), m) || !parse_digits(iso.substr(8, 2), d)) {
        throw Error(Errc::malformed_date, "expected YYYY-MM-DD, got '" + std::string(iso) + "'");
    }
    return from_ymd(y, static_cast<unsigned>(m), static_cast<unsigned>(d));
}

std::string Date::to_string() const {
    year_month_day ymd{days_};
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
    return buf;
}

int Date::year() const { return static_cast<int>(year_month_day{days_}.year()); }

Date Date::add_years(int years) const {
    year_month_day ymd{days_};
    auto shifted = ymd + std::chrono::years{years};
    // Feb 29 onto a non-leap year clamps to Feb 28.
    if (!shifted.ok()) shifted = shifted.year() / shifted.month() / last;
    return Date{sys_days{shifted}};
}

}  // namespace regisforge
