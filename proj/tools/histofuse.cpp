#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "histofuse/config.hpp"
#include "histofuse/pipeline.hpp"

namespace {

enum ExitCode { kOk = 0, kConfig = 1, kPrerequisite = 2, kNumeric = 3 };

}  // namespace

int main(int argc, char** argv) {
    using namespace histofuse;

    CLI::App app{"histofuse: histopathology image classification by manifold and hash feature fusion"};
    app.require_subcommand(1);
    std::string config_path, out, magnification, task;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    app.add_option("--config", config_path, "Pipeline config file (key = value with [sections])");
    app.add_option("--out", out, "Output directory (HISTOFUSE_OUT overrides)");
    app.add_option("--seed", seed, "Master seed");
    app.add_option("--threads", threads, "Worker thread cap; 1 guarantees bit-identical artifacts")->check(CLI::PositiveNumber);
    app.add_option("--magnification", magnification, "40, 100, 200, 400 or all");
    app.add_option("--task", task, "binary or multiclass (default: both)");
    app.add_flag("--print-config", "Print the effective configuration and exit")->configurable(false);

    std::vector<std::string> images;
    for (const auto& name : pipeline_commands()) {
        auto* sub = app.add_subcommand(name);
        sub->fallthrough();
        if (name == "predict") sub->add_option("images", images, "Image files to classify")->required();
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kConfig;
    }

    const std::string command = app.get_subcommands().front()->get_name();
    try {
        PipelineConfig cfg = config_path.empty() ? PipelineConfig{} : load_config(config_path);
        if (!out.empty()) cfg.out = out;
        if (const char* env = std::getenv("HISTOFUSE_OUT"); env && *env) cfg.out = env;
        if (seed) cfg.seed = *seed;
        if (threads) cfg.threads = *threads;
        if (!magnification.empty()) cfg.magnification = magnification;
        if (!task.empty()) cfg.task = task;
        cfg.validate();
        if (app.get_option("--print-config")->count() > 0) {
            std::cout << render_config(cfg);
            return kOk;
        }
        std::vector<std::filesystem::path> paths(images.begin(), images.end());
        run_command(command, cfg, std::cerr, paths, std::cout);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfig;
    } catch (const MissingPrerequisite& e) {
        std::cerr << command << ": " << e.what() << '\n';
        return kPrerequisite;
    } catch (const FormatError& e) {
        std::cerr << command << ": " << e.what() << '\n';
        return kPrerequisite;
    } catch (const NumericError& e) {
        std::cerr << command << ": numeric failure: " << e.what() << '\n';
        return kNumeric;
    } catch (const std::exception& e) {
        std::cerr << command << ": " << e.what() << '\n';
        return kConfig;
    }
    return kOk;
}
