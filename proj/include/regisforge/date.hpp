#pragma once

#include <chrono>
#include <compare>
#include <string>
#include <string_view>

namespace regisforge {

/// Calendar date at day resolution. Parsed from and rendered as ISO-8601
/// `YYYY-MM-DD`.
class Date {
public:
    constexpr Date() = default;
    constexpr explicit Date(std::chrono::sys_days d) : days_(d) {}

    static Date from_ymd(int y, unsigned m, unsigned d);

    /// Throws Error(malformed_date) for anything that is not a valid
    /// `YYYY-MM-DD` calendar date.
    static Date parse(std::string_view iso);

    std::string to_string() const;
    int year() const;
    std::chrono::sys_days days() const { return days_; }

    Date add_years(int years) const;

    friend constexpr auto operator<=>(const Date&, const Date&) = default;

private:
    std::chrono::sys_days days_{};
};

/// Closed interval [first, last].
struct DateSpan {
    Date first;
    Date last;

    bool contains(Date d) const { return first <= d && d <= last; }
    bool overlaps(const DateSpan& o) const { return first <= o.last && o.first <= last; }
    DateSpan hull(const DateSpan& o) const {
        return {first < o.first ? first : o.first, last < o.last ? o.last : last};
    }

    friend bool operator==(const DateSpan&, const DateSpan&) = default;
};

}  // namespace regisforge
