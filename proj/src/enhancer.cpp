#include "gsr/enhancer.hpp"

#include <atomic>
#include <cstdio>
#include <mutex>
#include <sstream>

#include <unistd.h>

#include "gsr/features.hpp"
#include "gsr/io.hpp"
#include "gsr/subprocess.hpp"

namespace gsr {
namespace {

std::vector<std::string> split_command(const std::string& cmd) {
    std::vector<std::string> out;
    std::istringstream is(cmd);
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

std::string next_uid() {
    static std::atomic<std::uint64_t> counter{0};
    std::ostringstream os;
    os << getpid() << "_" << counter.fetch_add(1);
    return os.str();
}

// One subprocess at a time per process; bounds resource use when several
// views are enhanced from worker threads.
std::mutex g_external_mutex;

Image enhance_external(const Image& image, const EnhancerSpec& spec) {
    std::lock_guard<std::mutex> lk(g_external_mutex);
    const std::string uid = next_uid();
    const std::string in_path = spec.external_workdir + "/in_" + uid + ".png";
    const std::string out_path = spec.external_workdir + "/out_" + uid + ".png";
    write_png_rgb8(in_path, image);

    auto argv = split_command(spec.external_command);
    if (argv.empty()) throw EnhancerError("external enhancer: empty command");
    argv.push_back(in_path);
    argv.push_back(out_path);

    const SubprocessResult res =
        run_subprocess(argv, spec.external_timeout_seconds, spec.external_workdir);
    if (res.timed_out) {
        std::remove(in_path.c_str());
        std::remove(out_path.c_str());
        throw EnhancerError("external enhancer timed out after " +
                            std::to_string(spec.external_timeout_seconds) + " s: " +
                            spec.external_command);
    }
    if (res.exit_code != 0) {
        std::remove(in_path.c_str());
        std::remove(out_path.c_str());
        throw EnhancerError("external enhancer exited with code " +
                            std::to_string(res.exit_code) + ": " + spec.external_command +
                            (res.stderr_text.empty() ? "" : "\nstderr: " + res.stderr_text));
    }

    Image out;
    try {
        out = read_png_rgb8(out_path);
    } catch (const IoError& e) {
        std::remove(in_path.c_str());
        std::remove(out_path.c_str());
        throw EnhancerError(std::string("external enhancer produced malformed output: ") +
                            e.what() +
                            (res.stderr_text.empty() ? "" : "\nstderr: " + res.stderr_text));
    }
    if (out.width != image.width || out.height != image.height) {
        std::remove(in_path.c_str());
        std::remove(out_path.c_str());
        throw EnhancerError("external enhancer changed the resolution (" +
                            std::to_string(out.width) + "x" + std::to_string(out.height) +
                            " vs " + std::to_string(image.width) + "x" +
                            std::to_string(image.height) + ")");
    }
    std::remove(in_path.c_str());
    std::remove(out_path.c_str());
    return out;
}

} // namespace

EnhancerSpec EnhancerSpec::external(const std::string& command, const std::string& workdir) {
    EnhancerSpec s;
    s.kind = Kind::External;
    s.external_command = command;
    s.external_workdir = workdir;
    return s;
}

EnhancerSpec EnhancerSpec::parse(const std::string& text) {
    if (text == "identity") return identity();
    if (text == "unsharp") return unsharp(1.0);
    if (text.rfind("unsharp:", 0) == 0) return unsharp(std::stod(text.substr(8)));
    if (text.rfind("external:", 0) == 0) return external(text.substr(9));
    throw UsageError("unknown enhancer spec: " + text);
}

Image enhance(const Image& image, const EnhancerSpec& spec) {
    if (image.channels != 3) throw UsageError("enhance expects an RGB image");
    switch (spec.kind) {
    case EnhancerSpec::Kind::Identity:
        return image;
    case EnhancerSpec::Kind::Unsharp: {
        if (spec.unsharp_strength < 0.0) {
            throw UsageError("unsharp strength must be >= 0");
        }
        Image blurred;
        detail::binomial_blur5(image, blurred);
        Image out = image;
        for (std::size_t i = 0; i < out.data.size(); ++i) {
            out.data[i] =
                clamp01(image.data[i] + spec.unsharp_strength * (image.data[i] - blurred.data[i]));
        }
        return out;
    }
    case EnhancerSpec::Kind::External:
        return enhance_external(image, spec);
    }
    throw UsageError("invalid enhancer kind");
}

} // namespace gsr
