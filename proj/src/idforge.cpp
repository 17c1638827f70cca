#include "regisforge/idforge.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "regisforge/error.hpp"
#include "regisforge/text.hpp"

namespace regisforge::idforge {

namespace {

bool is_sequence(std::uint64_t seq) { return seq >= kFirstSequence && seq < kSequenceLimit; }

int luhn_digit(std::uint64_t seq) {
    // Walk from the rightmost digit; it sits at an even position from the
    // left (position 14), so the rightmost digit is not doubled.
    int sum = 0;
    bool doubled = false;
    for (int i = 0; i < 14; ++i) {
        int d = static_cast<int>(seq % 10);
        seq /= 10;
        if (doubled) {
            d *= 2;
            if (d > 9) d -= 9;
        }
        sum += d;
        doubled = !doubled;
    }
    return (10 - sum % 10) % 10;
}

}  // namespace

Svid Svid::parse(std::string_view s) {
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.size() != 15 || ec != std::errc{} || p != s.data() + s.size() || !validate_svid(v)) {
        throw Error(Errc::malformed_sequence, "not a valid SVID: '" + std::string(s) + "'");
    }
    return Svid(v);
}

int check_digit(std::uint64_t seq) {
    if (!is_sequence(seq)) {
        throw Error(Errc::malformed_sequence, "sequence must have exactly 14 digits: " + std::to_string(seq));
    }
    return luhn_digit(seq);
}

bool validate_svid(std::uint64_t candidate) noexcept {
    std::uint64_t prefix = candidate / 10;
    if (!is_sequence(prefix)) return false;
    return static_cast<int>(candidate % 10) == luhn_digit(prefix);
}

bool validate_svid(std::string_view candidate) noexcept {
    if (candidate.size() != 15) return false;
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(candidate.data(), candidate.data() + candidate.size(), v);
    return ec == std::errc{} && p == candidate.data() + candidate.size() && validate_svid(v);
}

std::pair<GeneratorState, Svid> next_svid(GeneratorState state) {
    if (state.next_seq < kFirstSequence) {
        throw Error(Errc::malformed_sequence, "generator state below the first sequence");
    }
    if (state.next_seq >= kSequenceLimit) {
        throw Error(Errc::sequence_exhausted, "14-digit sequence space exhausted");
    }
    const std::uint64_t seq = state.next_seq;
    Svid id = Svid::from_value(seq * 10 + static_cast<std::uint64_t>(luhn_digit(seq)));
    return {GeneratorState{seq + 1}, id};
}

Generator Generator::load(const std::filesystem::path& state_file) {
    if (!std::filesystem::exists(state_file)) return Generator{};
    std::ifstream in(state_file);
    std::string line;
    std::getline(in, line);
    auto body = text::trim(line);
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(body.data(), body.data() + body.size(), v);
    if (ec != std::errc{} || p != body.data() + body.size() || v < kFirstSequence || v > kSequenceLimit) {
        throw Error(Errc::corrupt_artifact, "generator state file " + state_file.string() + " is unreadable");
    }
    return Generator(GeneratorState{v});
}

void Generator::persist(const std::filesystem::path& state_file) const {
    auto tmp = state_file;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw Error(Errc::io_error, "cannot write " + tmp.string());
        out << state_.next_seq << '\n';
    }
    std::filesystem::rename(tmp, state_file);
}

Svid Generator::next() {
    auto [state, id] = next_svid(state_);
    state_ = state;
    return id;
}

}  // namespace regisforge::idforge
