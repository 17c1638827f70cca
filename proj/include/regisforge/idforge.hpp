#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <utility>

namespace regisforge::idforge {

inline constexpr std::uint64_t kFirstSequence = 10'000'000'000'000ULL;   // 14 digits
inline constexpr std::uint64_t kSequenceLimit = 100'000'000'000'000ULL;  // 10^14

/// Sequential virtual identifier: a 14-digit sequence prefix followed by a
/// mod-10 check digit, 15 decimal digits in total. Ordering follows the
/// numeric value, so the "oldest" identifier is also the smallest.
class Svid {
public:
    constexpr Svid() = default;

    /// Accepts any value; use `validate_svid` to check well-formedness.
    static constexpr Svid from_value(std::uint64_t v) { return Svid(v); }

    /// Parses a 15-character decimal string; throws Error(malformed_sequence)
    /// if the string is not a valid SVID.
    static Svid parse(std::string_view s);

    constexpr std::uint64_t value() const { return value_; }
    constexpr std::uint64_t prefix() const { return value_ / 10; }
    std::string to_string() const { return std::to_string(value_); }

    friend constexpr auto operator<=>(Svid, Svid) = default;

private:
    constexpr explicit Svid(std::uint64_t v) : value_(v) {}
    std::uint64_t value_ = 0;
};

struct GeneratorState {
    std::uint64_t next_seq = kFirstSequence;
    friend bool operator==(const GeneratorState&, const GeneratorState&) = default;
};

/// Luhn-style mod-10 check digit over a 14-digit sequence. Digits are
/// weighted 2,1,2,1,... from the leftmost; doubled digits above 9 have 9
/// subtracted. Throws Error(malformed_sequence) unless `seq` has exactly
/// 14 decimal digits.
int check_digit(std::uint64_t seq);

/// True iff `candidate` has 15 digits, its prefix is a valid sequence and
/// its last digit equals `check_digit(prefix)`. Never throws.
bool validate_svid(std::uint64_t candidate) noexcept;
bool validate_svid(std::string_view candidate) noexcept;

/// Consumes `state.next_seq` and returns the advanced state together with
/// the emitted identifier. Throws Error(sequence_exhausted) once the
/// 14-digit space is used up.
std::pair<GeneratorState, Svid> next_svid(GeneratorState state);

/// Single ID authority backed by a one-line decimal state file. Draws are
/// buffered in memory; `persist` writes the state atomically (temp file +
/// rename). Call it after every batch so a restart cannot reissue IDs.
class Generator {
public:
    Generator() = default;
    explicit Generator(GeneratorState state) : state_(state) {}

    /// Loads the state file, or starts fresh if it does not exist.
    static Generator load(const std::filesystem::path& state_file);
    void persist(const std::filesystem::path& state_file) const;

    Svid next();
    const GeneratorState& state() const { return state_; }

private:
    GeneratorState state_;
};

}  // namespace regisforge::idforge

template <>
struct std::hash<regisforge::idforge::Svid> {
    std::size_t operator()(regisforge::idforge::Svid s) const noexcept {
        return std::hash<std::uint64_t>{}(s.value());
    }
};
