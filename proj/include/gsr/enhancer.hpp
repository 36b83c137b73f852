#pragma once

#include <string>

#include "gsr/types.hpp"

namespace gsr {

// Pluggable frozen image enhancer producing R~ = enhance(R). The default
// kinds are deterministic; `External` shells out to a user-supplied command
// via a PNG file protocol and is the hook for plugging in a real model.
struct EnhancerSpec {
    enum class Kind { Identity, Unsharp, External };
    Kind kind = Kind::Identity;
    double unsharp_strength = 1.0; // lambda_e, >= 0
    std::string external_command;  // whitespace-split into argv
    std::string external_workdir = ".";
    double external_timeout_seconds = 30.0;

    static EnhancerSpec identity() { return {}; }
    static EnhancerSpec unsharp(double strength) {
        EnhancerSpec s;
        s.kind = Kind::Unsharp;
        s.unsharp_strength = strength;
        return s;
    }
    static EnhancerSpec external(const std::string& command, const std::string& workdir = ".");

    // Parses "identity", "unsharp", "unsharp:<strength>", "external:<cmd>".
    static EnhancerSpec parse(const std::string& text);
};

// Output resolution always equals input resolution; RGB stays in [0,1].
// External protocol: write <workdir>/in_<uid>.png, run `<command> <in> <out>`,
// read <workdir>/out_<uid>.png; both files are removed on success.
Image enhance(const Image& image, const EnhancerSpec& spec);

} // namespace gsr
