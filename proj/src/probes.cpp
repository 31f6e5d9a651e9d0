#include "kt/probes.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

namespace kt::probes {

AuditReport timestamp_audit(const std::vector<dataio::InteractionRecord>& records, std::size_t max_examples) {
    AuditReport report;
    report.total_records = static_cast<std::int64_t>(records.size());

    // The list order IS the stored order under audit; freshly parsed tables
    // arrive in file order, aligned ones in their repaired order.
    std::map<std::pair<std::string, std::string>, const dataio::InteractionRecord*> last;
    for (const auto& r : records) {
        const auto* rec = &r;
        const auto key = std::make_pair(rec->subject_id, rec->assignment_id);
        auto it = last.find(key);
        if (it != last.end() && rec->server_timestamp_ms < it->second->server_timestamp_ms) {
            report.total_violations += 1;
            report.per_student_violations[rec->subject_id] += 1;
            if (report.examples.size() < max_examples) {
                AuditViolation v;
                v.subject_id = rec->subject_id;
                v.assignment_id = rec->assignment_id;
                v.attempt_earlier_stored = it->second->attempt_index;
                v.attempt_later_stored = rec->attempt_index;
                v.ts_earlier_stored = it->second->server_timestamp_ms;
                v.ts_later_stored = rec->server_timestamp_ms;
                v.row_earlier = it->second->storage_order;
                v.row_later = rec->storage_order;
                report.examples.push_back(std::move(v));
            }
        }
        last[key] = rec;
    }
    report.verdict = report.total_violations == 0 ? AuditVerdict::aligned : AuditVerdict::misaligned;
    return report;
}

std::string audit_json(const AuditReport& report) {
    nlohmann::json j;
    j["total_records"] = report.total_records;
    j["total_violations"] = report.total_violations;
    j["verdict"] = report.verdict == AuditVerdict::aligned ? "ALIGNED" : "MISALIGNED";
    for (const auto& [subject, count] : report.per_student_violations) {
        j["per_student_violations"][subject] = count;
    }
    j["examples"] = nlohmann::json::array();
    for (const auto& v : report.examples) {
        nlohmann::json je;
        je["subject"] = v.subject_id;
        je["assignment"] = v.assignment_id;
        je["attempt_earlier_stored"] = v.attempt_earlier_stored;
        je["attempt_later_stored"] = v.attempt_later_stored;
        je["ts_earlier_stored"] = v.ts_earlier_stored;
        je["ts_later_stored"] = v.ts_later_stored;
        je["row_earlier"] = v.row_earlier;
        je["row_later"] = v.row_later;
        j["examples"].push_back(je);
    }
    return j.dump(2) + "\n";
}

ProbeReport future_perturbation_probe(const models::ModelParams& params,
                                      const dataio::StudentSequence& seq, int t_star, int n_trials,
                                      rng::CounterRng rng) {
    const int T = static_cast<int>(seq.steps.size());
    if (t_star < 1 || t_star >= T) {
        throw DataError("probe cut point must satisfy 1 <= t* < T, got t*=" + std::to_string(t_star) +
                        " with T=" + std::to_string(T));
    }
    if (n_trials < 1) throw DataError("probe needs at least one trial");

    const auto base = models::dkt_forward(seq, params);  // dropout off
    const auto Q = params.dims.n_problems;

    ProbeReport report;
    report.cut_point = t_star;
    report.n_trials = n_trials;

    for (int trial = 0; trial < n_trials; ++trial) {
        rng::RngStream stream(rng.derive("trial").derive(static_cast<std::uint64_t>(trial)));
        auto perturbed = seq;
        for (int t = t_star; t < T; ++t) {
            auto& step = perturbed.steps[static_cast<std::size_t>(t)];
            step.correct = stream.next_bernoulli(0.5) ? 1 : 0;
            // Path substitution needs a vocabulary; models without one (dkt,
            // eckt) never read the triples anyway.
            if (step.paths && params.dims.n_tokens > 0 && params.dims.n_paths > 0) {
                const int r_max = std::max(1, params.dims.r_max);
                const auto r = static_cast<std::size_t>(stream.next_int(1, r_max));
                dataio::PathContextSet set;
                for (std::size_t k = 0; k < r; ++k) {
                    dataio::PathTriple pt;
                    pt.start_token = static_cast<int>(stream.next_int(0, params.dims.n_tokens - 1));
                    pt.path = static_cast<int>(stream.next_int(0, params.dims.n_paths - 1));
                    pt.end_token = static_cast<int>(stream.next_int(0, params.dims.n_tokens - 1));
                    set.triples.push_back(pt);
                }
                step.paths = std::move(set);
            }
            if (step.embedding) {
                for (auto& v : step.embedding->vector) v = stream.next_uniform(-1.0, 1.0);
            }
        }
        const auto alt = models::dkt_forward(perturbed, params);
        for (int t = 0; t < t_star; ++t) {
            for (int q = 0; q < Q; ++q) {
                report.max_prefix_delta =
                    std::max(report.max_prefix_delta, std::abs(base.at2(t, q) - alt.at2(t, q)));
            }
        }
    }
    report.verdict = report.max_prefix_delta <= report.threshold ? ProbeVerdict::causal : ProbeVerdict::leaky;
    return report;
}

std::string probe_json(const ProbeReport& report) {
    nlohmann::json j;
    j["cut_point"] = report.cut_point;
    j["n_trials"] = report.n_trials;
    j["max_prefix_delta"] = report.max_prefix_delta;
    j["threshold"] = report.threshold;
    j["verdict"] = report.verdict == ProbeVerdict::causal ? "CAUSAL" : "LEAKY";
    return j.dump(2) + "\n";
}

}  // namespace kt::probes
