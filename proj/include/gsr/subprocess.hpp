#pragma once

#include <string>
#include <vector>

namespace gsr {

struct SubprocessResult {
    int exit_code = -1;
    bool timed_out = false;
    std::string stderr_text;
};

// Runs argv[0] with the given arguments, capturing stderr. Kills the child
// after timeout_seconds (<= 0 disables the timeout).
SubprocessResult run_subprocess(const std::vector<std::string>& argv, double timeout_seconds,
                                const std::string& workdir);

} // namespace gsr
