#include <doctest.h>

#include <algorithm>
#include <map>
#include <numeric>
#include <random>
#include <tuple>

#include "regisforge/error.hpp"
#include "regisforge/timeline.hpp"
#include "support.hpp"
#include "timeline_cases.hpp"

using namespace regisforge;
using namespace regisforge::timeline;

namespace {

Event ev(std::string key, const char* date, std::uint64_t seq, Payload payload = {}) {
    return Event{std::move(key), Date::parse(date), seq, std::move(payload), std::nullopt};
}

TimelineDB case_db() {
    TimelineDB db("CASES");
    std::uint64_t seq = 0;
    const auto& cases = timeline_cases::table();
    for (std::size_t i = 0; i < cases.size(); ++i) {
        char key[8];
        std::snprintf(key, sizeof key, "E%02zu", i);
        const auto values = timeline_cases::as_values(cases[i]);
        for (std::size_t j = 0; j < values.size(); ++j) {
            const Date d = Date::from_ymd(2010, 1, 1 + static_cast<unsigned>(j));
            db.append_event(Event{key, d, seq++, {{"status", values[j]}}, std::nullopt});
        }
    }
    return db;
}

}  // namespace

TEST_CASE("appends keep every timeline sorted") {
    TimelineDB db("IRD");
    db.append_event(ev("a", "2020-03-01", 0));
    db.append_event(ev("a", "2019-01-01", 1));
    db.append_event(ev("a", "2020-03-01", 2));
    db.append_event(ev("b", "2020-01-01", 3));
    const auto& a = *db.find("a");
    REQUIRE(a.size() == 3);
    CHECK(a[0].ingest_seq == 1);
    CHECK(a[1].ingest_seq == 0);
    CHECK(a[2].ingest_seq == 2);
    CHECK(db.find("b")->size() == 1);
    CHECK(db.find("zzz") == nullptr);
    CHECK(db.next_ingest_seq() == 4);
}

TEST_CASE("random interleaved appends match a re-sorting oracle") {
    std::mt19937_64 rng(9);
    TimelineDB db("X");
    std::map<std::string, std::vector<std::tuple<Date, std::uint64_t>>> oracle;
    std::vector<std::uint64_t> seqs(3000);
    std::iota(seqs.begin(), seqs.end(), 0);
    std::shuffle(seqs.begin(), seqs.end(), rng);
    for (auto seq : seqs) {
        const std::string key = "k" + std::to_string(rng() % 50);
        const Date d = Date::from_ymd(2000 + static_cast<int>(rng() % 5), 1 + rng() % 12, 1 + rng() % 28);
        db.append_event(Event{key, d, seq, {}, std::nullopt});
        oracle[key].emplace_back(d, seq);
    }
    for (auto& [key, list] : oracle) {
        std::sort(list.begin(), list.end());
        const auto& got = *db.find(key);
        REQUIRE(got.size() == list.size());
        for (std::size_t i = 0; i < list.size(); ++i) {
            REQUIRE(got[i].event_date == std::get<0>(list[i]));
            REQUIRE(got[i].ingest_seq == std::get<1>(list[i]));
        }
    }
}

TEST_CASE("malformed events are refused") {
    TimelineDB db("X");
    db.append_event(ev("a", "2020-01-01", 7));
    CHECK_THROWS_AS(db.append_event(ev("b", "2020-01-01", 7)), Error);
    CHECK_THROWS_AS(db.append_event(ev("", "2020-01-01", 8)), Error);
    CHECK_THROWS_AS(Date::parse("2020-02-30"), Error);
    CHECK(db.event_count() == 1);
}

TEST_CASE("grouping is verbatim and order independent") {
    std::vector<Event> raw = {ev("a", "2020-01-01", 0), ev("a", "2020-01-02", 1), ev("b", "2020-01-01", 2)};
    const auto db = group_events("S", raw);
    CHECK(db.timelines().size() == 2);
    CHECK(db.find("a")->size() == 2);
    CHECK(db.find("b")->size() == 1);
    std::vector<Event> cased = {ev("A", "2020-01-01", 0), ev("a", "2020-01-01", 1)};
    CHECK(group_events("S", cased).timelines().size() == 2);

    std::mt19937_64 rng(1);
    std::vector<Event> many;
    for (std::uint64_t i = 0; i < 10000; ++i) {
        many.push_back(Event{"k" + std::to_string(rng() % 700), Date::from_ymd(2015, 1 + rng() % 12, 1 + rng() % 28),
                             i, {{"v", std::to_string(rng() % 3)}}, std::nullopt});
    }
    const auto reference = group_events("S", many);
    std::map<std::string, std::vector<Event>> oracle;
    for (const auto& e : many) oracle[e.entity_key].push_back(e);
    for (auto& [k, list] : oracle) {
        std::sort(list.begin(), list.end(), [](const Event& x, const Event& y) {
            return std::tie(x.event_date, x.ingest_seq) < std::tie(y.event_date, y.ingest_seq);
        });
    }
    CHECK(reference.timelines() == oracle);
    for (int round = 0; round < 3; ++round) {
        std::shuffle(many.begin(), many.end(), rng);
        REQUIRE(group_events("S", many) == reference);
    }
    CHECK(group_events("S", reference.flatten()) == reference);
    CHECK(reference.event_count() == 10000);
}

TEST_CASE("timeline files round-trip") {
    testsupport::TempDir dir("timeline");
    const auto db = case_db();
    const auto events = db.flatten();
    TimelineDB::append_to_file(std::span(events).first(10), dir / "t.ndjson");
    TimelineDB::append_to_file(std::span(events).subspan(10), dir / "t.ndjson");
    CHECK(TimelineDB::load(dir / "t.ndjson", "CASES") == db);
}

TEST_CASE("csv extracts become events with missing cells") {
    testsupport::TempDir dir("timeline");
    testsupport::write_file(dir / "x.csv", "id,date,status,income\nK1,2020-01-01,A,10\nK1,2020-02-01,,12\nK2,2019-05-05,B,\n");
    const auto events = read_events_csv(dir / "x.csv", "id", "date", 5);
    REQUIRE(events.size() == 3);
    CHECK(events[0].ingest_seq == 5);
    CHECK(events[1].payload.at("status") == std::nullopt);
    CHECK(events[2].payload.at("income") == std::nullopt);
    CHECK(events[0].payload.count("id") == 0);
    const auto db = group_events("X", events);
    CHECK(db.latest_value("K1", "status") == "A");
    CHECK(db.latest_value("K1", "income") == "12");
    CHECK(db.latest_value("K2", "entity_key") == "K2");
    CHECK_THROWS_AS(read_events_csv(dir / "x.csv", "nope", "date"), Error);
    testsupport::write_file(dir / "bad.csv", "id,date\nK1,01/02/2020\n");
    CHECK_THROWS_AS(read_events_csv(dir / "bad.csv", "id", "date"), Error);
}

TEST_CASE("stability metrics on the hand-worked table") {
    const auto& cases = timeline_cases::table();
    REQUIRE(cases.size() == 20);
    for (const auto& c : cases) {
        const auto values = timeline_cases::as_values(c);
        const auto s = sequence_stability(values);
        CHECK(s.change_rate == timeline_cases::expected_change(c));
        CHECK(s.missing_rate == timeline_cases::expected_missing(c));
        CHECK(s.events == c.values.size());
    }

    const auto report = stability_metrics(case_db(), "status");
    REQUIRE(report.per_entity.size() == cases.size());
    double change = 0, missing = 0;
    std::size_t missing_events = 0, events = 0;
    std::size_t i = 0;
    for (const auto& [key, s] : report.per_entity) {
        const auto& c = cases[i++];
        CHECK(s.change_rate == timeline_cases::expected_change(c));
        CHECK(s.missing_rate == timeline_cases::expected_missing(c));
        CHECK(s.change_rate >= 0.0);
        CHECK(s.change_rate <= 1.0);
        change += timeline_cases::expected_change(c);
        missing += timeline_cases::expected_missing(c);
        missing_events += static_cast<std::size_t>(c.missing);
        events += c.values.size();
    }
    CHECK(report.mean_change_rate == doctest::Approx(change / 20).epsilon(1e-15));
    CHECK(report.mean_missing_rate == doctest::Approx(missing / 20).epsilon(1e-15));
    CHECK(report.pooled_missing_rate == static_cast<double>(missing_events) / static_cast<double>(events));
}

TEST_CASE("stability metrics need a known field") {
    CHECK_THROWS_AS(stability_metrics(case_db(), "nope"), Error);
}
