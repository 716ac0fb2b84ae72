// Acceptance gate, fast half: every pinned-result check that runs without a
// desk-scale training loop. Prints one line per criterion and fails the
// process if any criterion fails.

#include <cstdio>
#include <exception>
#include <string>
#include <utility>
#include <vector>

#include "latflow/golden.hpp"

int main(int argc, char** argv) {
    const std::string dir = argc > 1 ? argv[1] : "goldens";
    const std::vector<std::pair<int, std::string>> checks = {
        {1, "identifier-counting"},  {2, "interpolant-algebra"},
        {3, "velocity-reparameterization"}, {4, "metric-oracles"},
        {5, "codec-structure"},      {6, "euler-integrator"},
        {9, "physics-conservation"}, {10, "freeze-and-ema"},
        {11, "cascaded-rollout"},
    };
    int failures = 0;
    for (const auto& [num, name] : checks) {
        try {
            const auto out = latflow::golden::run_golden(name, dir);
            if (!out.pass) ++failures;
            std::printf("criterion %2d %s  %s (%.2fs): %s\n", num, out.pass ? "PASS" : "FAIL",
                        name.c_str(), out.seconds, out.detail.c_str());
        } catch (const std::exception& e) {
            ++failures;
            std::printf("criterion %2d FAIL  %s: %s\n", num, name.c_str(), e.what());
        }
    }
    return failures == 0 ? 0 : 1;
}
