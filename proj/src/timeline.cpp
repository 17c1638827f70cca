#include "regisforge/timeline.hpp"

#include <algorithm>
#include <fstream>

#include <nlohmann/json.hpp>

#include "regisforge/csv.hpp"
#include "regisforge/error.hpp"
#include "regisforge/text.hpp"

namespace regisforge::timeline {

using nlohmann::json;

namespace {

bool event_less(const Event& a, const Event& b) {
    if (a.event_date != b.event_date) return a.event_date < b.event_date;
    return a.ingest_seq < b.ingest_seq;
}

}  // namespace

void TimelineDB::append_event(Event event) {
    if (event.entity_key.empty()) throw Error(Errc::invalid_event, "event without an entity key");
    if (seqs_.count(event.ingest_seq)) {
        throw Error(Errc::invalid_event, "ingest sequence " + std::to_string(event.ingest_seq) + " reused");
    }
    seqs_.insert(event.ingest_seq);
    for (const auto& [k, v] : event.payload) fields_.insert(k);
    auto& line = timelines_[event.entity_key];
    auto pos = std::upper_bound(line.begin(), line.end(), event, event_less);
    line.insert(pos, std::move(event));
}

const std::vector<Event>* TimelineDB::find(const std::string& entity_key) const {
    auto it = timelines_.find(entity_key);
    return it == timelines_.end() ? nullptr : &it->second;
}

std::vector<Event> TimelineDB::flatten() const {
    std::vector<Event> out;
    out.reserve(seqs_.size());
    for (const auto& [key, events] : timelines_) out.insert(out.end(), events.begin(), events.end());
    return out;
}

std::optional<std::string> TimelineDB::latest_value(const std::string& entity_key, const std::string& field) const {
    const auto* events = find(entity_key);
    if (!events) return std::nullopt;
    if (field == "entity_key") return entity_key;
    for (auto it = events->rbegin(); it != events->rend(); ++it) {
        auto f = it->payload.find(field);
        if (f != it->payload.end() && f->second) return f->second;
    }
    return std::nullopt;
}

bool TimelineDB::has_field(const std::string& field) const {
    return field == "entity_key" || fields_.count(field) != 0;
}

void TimelineDB::append_to_file(std::span<const Event> events, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::app);
    if (!out) throw Error(Errc::io_error, "cannot append to " + path.string());
    for (const auto& e : events) {
        json payload = json::object();
        for (const auto& [k, v] : e.payload) payload[k] = v ? json(*v) : json(nullptr);
        json line = {{"entity_key", e.entity_key},
                     {"event_date", e.event_date.to_string()},
                     {"ingest_seq", e.ingest_seq},
                     {"payload", payload}};
        if (e.payload_ref) line["payload_ref"] = *e.payload_ref;
        out << line.dump() << '\n';
    }
}

TimelineDB TimelineDB::load(const std::filesystem::path& path, std::string source) {
    TimelineDB db(std::move(source));
    std::ifstream in(path);
    if (!in) throw Error(Errc::io_error, "cannot open " + path.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (text::trim(line).empty()) continue;
        try {
            auto j = json::parse(line);
            Event e;
            e.entity_key = j.at("entity_key").get<std::string>();
            e.event_date = Date::parse(j.at("event_date").get<std::string>());
            e.ingest_seq = j.at("ingest_seq").get<std::uint64_t>();
            for (const auto& [k, v] : j.at("payload").items()) {
                e.payload[k] = v.is_null() ? std::nullopt : std::optional<std::string>(v.get<std::string>());
            }
            if (j.contains("payload_ref")) e.payload_ref = j["payload_ref"].get<std::string>();
            db.append_event(std::move(e));
        } catch (const json::exception& ex) {
            throw Error(Errc::corrupt_artifact, path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
        }
    }
    return db;
}

TimelineDB group_events(std::string source, std::span<const Event> raw_events) {
    std::vector<Event> sorted(raw_events.begin(), raw_events.end());
    std::sort(sorted.begin(), sorted.end(), [](const Event& a, const Event& b) {
        if (a.entity_key != b.entity_key) return a.entity_key < b.entity_key;
        return event_less(a, b);
    });
    TimelineDB db(std::move(source));
    for (auto& e : sorted) db.append_event(std::move(e));
    return db;
}

FieldStability sequence_stability(std::span<const std::optional<std::string>> values) {
    FieldStability s;
    s.events = values.size();
    if (values.empty()) return s;
    std::size_t missing = 0, pairs = 0, changes = 0;
    const std::string* previous = nullptr;
    for (const auto& v : values) {
        if (!v) {
            ++missing;
            continue;
        }
        if (previous) {
            ++pairs;
            if (*previous != *v) ++changes;
        }
        previous = &*v;
    }
    s.missing_rate = static_cast<double>(missing) / static_cast<double>(values.size());
    s.change_rate = pairs == 0 ? 0.0 : static_cast<double>(changes) / static_cast<double>(pairs);
    return s;
}

StabilityReport stability_metrics(const TimelineDB& db, const std::string& field) {
    if (!db.has_field(field) || field == "entity_key") {
        throw Error(Errc::unknown_field, "no " + db.source() + " event carries field '" + field + "'");
    }
    StabilityReport report;
    report.field = field;
    std::size_t total_events = 0;
    std::size_t missing_events = 0;
    for (const auto& [key, events] : db.timelines()) {
        std::vector<std::optional<std::string>> values;
        values.reserve(events.size());
        for (const auto& e : events) {
            auto it = e.payload.find(field);
            values.push_back(it == e.payload.end() ? std::nullopt : it->second);
            if (!values.back()) ++missing_events;
        }
        FieldStability s = sequence_stability(values);
        report.mean_change_rate += s.change_rate;
        report.mean_missing_rate += s.missing_rate;
        total_events += s.events;
        report.per_entity.emplace(key, s);
    }
    if (!report.per_entity.empty()) {
        const auto n = static_cast<double>(report.per_entity.size());
        report.mean_change_rate /= n;
        report.mean_missing_rate /= n;
        report.pooled_missing_rate = static_cast<double>(missing_events) / static_cast<double>(total_events);
    }
    return report;
}

std::vector<Event> read_events_csv(const std::filesystem::path& path, const std::string& key_column,
                                   const std::string& date_column, std::uint64_t first_seq) {
    const auto table = csv::read_file(path);
    const auto key_col = table.column(key_column);
    const auto date_col = table.column(date_column);
    if (!key_col) throw Error(Errc::unknown_field, path.string() + " has no key column '" + key_column + "'");
    if (!date_col) throw Error(Errc::unknown_field, path.string() + " has no date column '" + date_column + "'");

    std::vector<Event> events;
    events.reserve(table.rows.size());
    std::uint64_t seq = first_seq;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        Event e;
        e.entity_key = std::string(text::trim(row[*key_col]));
        if (e.entity_key.empty()) {
            throw Error(Errc::invalid_event, path.string() + " row " + std::to_string(r + 1) + " has no entity key");
        }
        try {
            e.event_date = Date::parse(text::trim(row[*date_col]));
        } catch (const Error& ex) {
            throw Error(Errc::malformed_date, path.string() + " row " + std::to_string(r + 1) + ": " + ex.what());
        }
        e.ingest_seq = seq++;
        for (std::size_t c = 0; c < table.header.size(); ++c) {
            if (c == *key_col || c == *date_col) continue;
            const auto value = text::trim(row[c]);
            e.payload[table.header[c]] = value.empty() ? std::nullopt : std::optional<std::string>(value);
        }
        events.push_back(std::move(e));
    }
    return events;
}

}  // namespace regisforge::timeline
