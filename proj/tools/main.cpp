#include <string>

#include <CLI11.hpp>

#include "mia/pipeline.hpp"

int main(int argc, char** argv) {
    CLI::App app{"mia - atlas segmentation, lung-CT registration and skin-lesion "
                 "classification pipelines"};
    app.require_subcommand(1);

    std::string config_path;
    mia::CliOptions opts;
    std::uint64_t seed = 0;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON run configuration")->required();
        cmd->add_option("--seed", seed, "override the config seed");
        cmd->add_option("--out-dir", opts.out_dir, "override the config out_dir");
        cmd->add_option("--jobs", opts.jobs, "parallel workers for independent cases/folds")
            ->check(CLI::PositiveNumber);
        cmd->add_flag("--one-based", opts.one_based,
                      "treat landmark files as 1-based indices");
        return cmd;
    };

    const char* descriptions[] = {
        "generate synthetic phantom datasets",
        "brain-MRI normalization or the lung-CT artifact-removal chain",
        "atlas-based brain tissue segmentation",
        "pairwise intensity registration with TRE evaluation",
        "replay a saved transform chain on a landmark file",
        "extract handcrafted lesion features to CSV",
        "feature-space classification with cross-validation",
        "compute segmentation or landmark metrics",
    };
    std::vector<CLI::App*> commands;
    int i = 0;
    for (const char* name : mia::kPipelineNames)
        commands.push_back(add_common(app.add_subcommand(name, descriptions[i++])));

    CLI11_PARSE(app, argc, argv);

    for (std::size_t c = 0; c < commands.size(); ++c)
        if (commands[c]->parsed()) {
            opts.seed_set = commands[c]->count("--seed") > 0;
            opts.seed = seed;
            return mia::run_pipeline_file(mia::kPipelineNames[c], config_path, opts);
        }
    return 1;
}
