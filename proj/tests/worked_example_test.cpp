#include <doctest.h>

#include "regisforge/registry.hpp"
#include "scenarios.hpp"

using namespace regisforge;
using namespace regisforge::registry;

TEST_CASE("three keys for one person alias to the first identifier") {
    scenarios::TripleKey s;
    REQUIRE(s.ird.records().size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(s.ird.records()[i].svid == s.svids[i]);
        CHECK(s.ird.records()[i].alias_id == s.svids[0]);
    }
    CHECK(s.ird.representatives().size() == 1);
}

TEST_CASE("initial register has one record per source entity") {
    scenarios::ThreeSources s;
    REQUIRE(s.reg.records().size() == 9);
    const char* birth[] = {"", "IRD", "IRD", "IRD", "IMM", "IMM", "IMM", "OTH", "OTH", "OTH"};
    for (int i = 1; i <= 9; ++i) {
        const auto& r = s.reg.at(s.sv[i]);
        CHECK(r.birth_source == birth[i]);
        CHECK(r.current_id == s.sv[i]);
        CHECK(r.source_alias.size() == 1);
        CHECK(r.source_alias.at(birth[i]) == s.sv[i]);
    }
    CHECK(s.reg.sources() == std::vector<std::string>{"IRD", "IMM", "OTH"});
}

TEST_CASE("linking IRD 3 with IMM 5 fills both alias columns") {
    scenarios::ThreeSources s;
    s.reg.link_entities(s.sv[3], s.sv[5]);

    const auto& r3 = s.reg.at(s.sv[3]);
    CHECK(r3.source_alias.at("IRD") == s.sv[3]);
    CHECK(r3.source_alias.at("IMM") == s.sv[5]);
    CHECK(r3.source_alias.count("OTH") == 0);
    CHECK(r3.current_id == s.sv[3]);

    const auto& r5 = s.reg.at(s.sv[5]);
    CHECK(r5.source_alias.at("IRD") == s.sv[3]);
    CHECK(r5.source_alias.at("IMM") == s.sv[5]);
    CHECK(r5.current_id == s.sv[3]);
    CHECK(s.reg.resolve_current_id(s.sv[5]) == s.sv[3]);

    for (int i : {1, 2, 4, 6, 7, 8, 9}) {
        CHECK(s.reg.at(s.sv[i]).current_id == s.sv[i]);
        CHECK(s.reg.at(s.sv[i]).source_alias.size() == 1);
    }
    const auto unique = s.reg.unique_view();
    CHECK(unique.size() == 8);
    CHECK(s.reg.records().size() == 9);
    for (const auto& r : unique) CHECK(r.birth_svid != s.sv[5]);

    const auto frame = build_frame(s.reg, {}, Date::parse("2020-12-31"), {}, "persons");
    CHECK(frame.members.size() == 8);
}

TEST_CASE("locations under an enterprise and the self-headed view") {
    idforge::Generator ids;
    AdminRegister ent("ENT"), loc("LOC");
    const auto e1 = ent.ingest_transaction(ids, "E1", {}, "2020-01-01", {}).svid;
    const auto l2 = loc.ingest_transaction(ids, "L2", {}, "2020-01-01", {}).svid;
    const auto l3 = loc.ingest_transaction(ids, "L3", {}, "2020-01-01", {}).svid;
    std::vector<const AdminRegister*> srcs{&ent, &loc};
    auto reg = EntityRegister::init(srcs, {{"ENT", "enterprise"}, {"LOC", "location"}});
    Hierarchy h;
    h.allowed = {{"location", "enterprise"}};

    reg.link_child_to_parent(l2, e1, h);
    reg.link_child_to_parent(l3, e1, h);

    auto row2 = reg.hierarchy_row(l2, h);
    CHECK(row2.at("enterprise") == e1);
    CHECK(row2.at("location") == l2);
    auto row3 = reg.hierarchy_row(l3, h);
    CHECK(row3.at("enterprise") == e1);
    CHECK(row3.at("location") == l3);

    reg.link_child_to_parent(e1, e1, h);
    auto row1 = reg.hierarchy_row(e1, h);
    CHECK(row1.at("enterprise") == e1);
    CHECK(row1.at("location") == e1);
    CHECK(reg.at(e1).parent_alias == e1);
}
