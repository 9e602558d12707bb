#pragma once

#include <json.hpp>

#include "vsa/cpf.hpp"
#include "vsa/qlimits.hpp"
#include "vsa/security.hpp"

namespace vsa {

using Json = nlohmann::json;

// Non-finite doubles are written as null.

/// Bus-keyed state payload: id, |V|, angle in degrees, injections, role, limit flag.
Json state_json(const NetworkModel& model, const OperatingState& st);

void to_json(Json& j, const CriticalGenerator& g);
void to_json(Json& j, const CriticalGeneratorList& l);
void to_json(Json& j, const BusIndices& b);
void to_json(Json& j, const RprModel& m);
void to_json(Json& j, const StabilityReport& r);
void to_json(Json& j, const ContingencyVerdict& v);
void to_json(Json& j, const ConfusionMetrics& m);
void to_json(Json& j, const WilcoxonResult& w);

/// Verdict payload with the critical flag recomputed against `threshold`.
Json verdict_json(const ContingencyVerdict& v, double threshold);

/// Report payload without the per-generator fit details.
Json report_summary(const StabilityReport& r);

}  // namespace vsa
