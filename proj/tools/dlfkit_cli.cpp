#include <cstdint>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "dlfkit/experiment.hpp"

int main(int argc, char** argv) {
    CLI::App app{"dlfkit: latent-diffusion auxiliary training toolkit"};
    app.require_subcommand(1);

    std::string config_path, out_dir, suite = "all";
    std::optional<std::uint64_t> seed;
    std::uint64_t seed_raw = 0;

    auto add_common = [&](CLI::App* sub, bool needs_config) {
        auto* c = sub->add_option("--config", config_path, "JSON config file");
        if (needs_config) c->required()->check(CLI::ExistingFile);
        sub->add_option("--out", out_dir, "output directory");
        sub->add_option("--seed", seed_raw, "seed override");
    };

    CLI::App* verify = app.add_subcommand("verify", "run invariant suites");
    verify->add_option("--suite", suite,
                       "all | diffusion | affine | gradcheck | sgcl");
    add_common(verify, false);

    CLI::App* train = app.add_subcommand("train", "train one model");
    add_common(train, true);

    CLI::App* sweep = app.add_subcommand("sweep", "corruption robustness sweep");
    add_common(sweep, true);

    CLI::App* demo =
        app.add_subcommand("demo-generate", "1D generative sampler demo");
    add_common(demo, true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    for (CLI::App* sub : {verify, train, sweep, demo})
        if (sub->parsed() && sub->count("--seed") > 0) seed = seed_raw;

    try {
        if (verify->parsed()) return dlfkit::cmd_verify(suite, out_dir, seed);
        if (train->parsed()) return dlfkit::cmd_train(config_path, out_dir, seed);
        if (sweep->parsed()) return dlfkit::cmd_sweep(config_path, out_dir, seed);
        if (demo->parsed())
            return dlfkit::cmd_demo_generate(config_path, out_dir, seed);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 2;
}
