#include "gsr/subprocess.hpp"

#include <cerrno>
#include <chrono>
#include <csignal>
#include <cstring>
#include <thread>

#include <fcntl.h>
#include <sys/wait.h>
#include <unistd.h>

#include "gsr/error.hpp"

namespace gsr {

SubprocessResult run_subprocess(const std::vector<std::string>& argv, double timeout_seconds,
                                const std::string& workdir) {
    if (argv.empty()) throw UsageError("run_subprocess: empty command");

    int err_pipe[2];
    if (pipe(err_pipe) != 0) throw IoError("pipe() failed");

    std::vector<char*> cargv;
    cargv.reserve(argv.size() + 1);
    for (const auto& a : argv) cargv.push_back(const_cast<char*>(a.c_str()));
    cargv.push_back(nullptr);

    const pid_t pid = fork();
    if (pid < 0) {
        close(err_pipe[0]);
        close(err_pipe[1]);
        throw IoError("fork() failed");
    }
    if (pid == 0) {
        close(err_pipe[0]);
        dup2(err_pipe[1], STDERR_FILENO);
        close(err_pipe[1]);
        if (!workdir.empty() && chdir(workdir.c_str()) != 0) _exit(126);
        execvp(cargv[0], cargv.data());
        _exit(127);
    }
    close(err_pipe[1]);

    // Non-blocking stderr drain while polling for exit / timeout.
    fcntl(err_pipe[0], F_SETFL, O_NONBLOCK);
    SubprocessResult result;
    const auto deadline = std::chrono::steady_clock::now() +
                          std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                              std::chrono::duration<double>(timeout_seconds));
    char buf[4096];
    bool exited = false;
    int status = 0;
    for (;;) {
        ssize_t n;
        while ((n = read(err_pipe[0], buf, sizeof(buf))) > 0) {
            result.stderr_text.append(buf, static_cast<std::size_t>(n));
        }
        const pid_t r = waitpid(pid, &status, WNOHANG);
        if (r == pid) {
            exited = true;
            break;
        }
        if (timeout_seconds > 0 && std::chrono::steady_clock::now() >= deadline) {
            kill(pid, SIGKILL);
            waitpid(pid, &status, 0);
            result.timed_out = true;
            break;
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    ssize_t n;
    while ((n = read(err_pipe[0], buf, sizeof(buf))) > 0) {
        result.stderr_text.append(buf, static_cast<std::size_t>(n));
    }
    close(err_pipe[0]);

    if (exited) {
        if (WIFEXITED(status)) {
            result.exit_code = WEXITSTATUS(status);
        } else if (WIFSIGNALED(status)) {
            result.exit_code = 128 + WTERMSIG(status);
        }
    }
    return result;
}

} // namespace gsr
