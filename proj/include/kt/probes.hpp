#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "kt/dataio.hpp"
#include "kt/models.hpp"
#include "kt/rng.hpp"

namespace kt::probes {

// Detection threshold between float noise and structural look-ahead; the
// causal variants are analytically exact, so any positive slack works.
inline constexpr double kLeakThreshold = 1e-9;

struct AuditViolation {
    std::string subject_id;
    std::string assignment_id;
    int attempt_earlier_stored = 0;  // attempt index of the earlier-stored record
    int attempt_later_stored = 0;
    std::int64_t ts_earlier_stored = 0;
    std::int64_t ts_later_stored = 0;
    std::int64_t row_earlier = 0;
    std::int64_t row_later = 0;
};

enum class AuditVerdict { aligned, misaligned };

struct AuditReport {
    std::int64_t total_records = 0;
    std::int64_t total_violations = 0;
    std::map<std::string, std::int64_t> per_student_violations;
    std::vector<AuditViolation> examples;  // capped
    AuditVerdict verdict = AuditVerdict::aligned;
};

// Counts, per student, adjacent stored record pairs whose timestamps
// decrease. Verdict is ALIGNED iff the count is zero.
AuditReport timestamp_audit(const std::vector<dataio::InteractionRecord>& records,
                            std::size_t max_examples = 10);

std::string audit_json(const AuditReport& report);

enum class ProbeVerdict { causal, leaky };

struct ProbeReport {
    int cut_point = 0;  // t*, 1-based; steps > t* were perturbed
    int n_trials = 0;
    double max_prefix_delta = 0.0;
    double threshold = kLeakThreshold;
    ProbeVerdict verdict = ProbeVerdict::causal;
};

// Rerandomizes everything after step t* (correctness flips, path-set
// substitutions, embedding noise) and measures how much the predictions at
// steps 1..t* move. A causally valid model moves them not at all.
ProbeReport future_perturbation_probe(const models::ModelParams& params,
                                      const dataio::StudentSequence& seq, int t_star, int n_trials,
                                      rng::CounterRng rng);

std::string probe_json(const ProbeReport& report);

}  // namespace kt::probes
