#pragma once

#include <string>
#include <vector>

#include "regisforge/registry.hpp"

namespace scenarios {

using regisforge::idforge::Generator;
using regisforge::idforge::Svid;
using regisforge::registry::AdminRegister;
using regisforge::registry::EntityRegister;

/// Three IRD keys issued to one person, marked as duplicates.
struct TripleKey {
    Generator ids;
    AdminRegister ird{"IRD"};
    std::vector<Svid> svids;

    TripleKey() {
        for (const char* key : {"IRD_001", "IRD_002", "IRD_003"}) {
            svids.push_back(ird.ingest_transaction(ids, key, {}, "2020-01-01", {}).svid);
        }
        ird.mark_source_duplicates(svids);
    }
};

/// Three core sources with three records each, drawn from one generator;
/// sv[i] is the i-th identifier issued (sv[0] unused).
struct ThreeSources {
    Generator ids;
    AdminRegister ird{"IRD"}, imm{"IMM"}, oth{"OTH"};
    std::vector<Svid> sv{Svid{}};
    EntityRegister reg;

    ThreeSources() {
        for (AdminRegister* src : {&ird, &imm, &oth}) {
            for (int i = 1; i <= 3; ++i) {
                const std::string key = src->source() + "_00" + std::to_string(i);
                sv.push_back(src->ingest_transaction(ids, key, {}, "2020-01-01", {}).svid);
            }
        }
        std::vector<const AdminRegister*> all{&ird, &imm, &oth};
        reg = EntityRegister::init(all);
    }
};

}  // namespace scenarios
