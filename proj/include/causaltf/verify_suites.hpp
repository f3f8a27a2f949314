#pragma once

#include <string>
#include <vector>

namespace causaltf {

struct SuiteResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

// Named property suites behind the CLI's `verify` subcommand. Each runs a
// randomized batch of checks with the given seed and reports pass/fail.
std::vector<std::string> suite_names();
SuiteResult run_suite(const std::string& name, uint64_t seed);

}  // namespace causaltf
