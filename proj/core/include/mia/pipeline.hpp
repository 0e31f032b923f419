#pragma once

#include <cstdint>
#include <string>

namespace mia {

struct CliOptions {
    bool seed_set = false;
    std::uint64_t seed = 0;
    std::string out_dir;  // overrides the config when non-empty
    int jobs = 1;
    bool one_based = false;
};

/// Validates the JSON config (unknown keys rejected), runs the requested
/// pipeline, and writes its reports under the resolved out_dir. Returns the
/// process exit code; failures also emit a JSON error report on stderr.
int run_pipeline(const std::string& subcommand, const std::string& config_text,
                 const CliOptions& opts);

/// Convenience: load the config from a file path.
int run_pipeline_file(const std::string& subcommand, const std::string& config_path,
                      const CliOptions& opts);

inline constexpr const char* kPipelineNames[] = {"phantom",  "preprocess", "segment",
                                                 "register", "transform-points", "features",
                                                 "classify", "evaluate"};

inline constexpr const char* kMiaVersion = "0.1.0";

}  // namespace mia
