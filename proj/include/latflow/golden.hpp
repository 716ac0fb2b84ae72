#pragma once

#include <string>
#include <vector>

namespace latflow::golden {

/// Result of one pinned-expectation run.
struct GoldenOutcome {
    std::string name;
    bool pass = false;
    std::string detail; // measured values next to their pinned ranges
    double seconds = 0.0;
};

/// All golden names in execution order; the fast algebraic ones come first,
/// the two desk-scale training runs last.
std::vector<std::string> golden_names();

/// Loads goldens_dir/<name>.json, executes the pinned routine, and compares
/// the measurements against the expected ranges. Exceeding the golden's
/// runtime budget fails it. Unknown names are ConfigErrors. Desk-scale
/// goldens cache datasets and checkpoints under LATFLOW_GOLDEN_WORK
/// (default ./golden-work), keyed by their config, so reruns and the
/// downstream golden reuse earlier training instead of repeating it.
GoldenOutcome run_golden(const std::string& name, const std::string& goldens_dir);

} // namespace latflow::golden
