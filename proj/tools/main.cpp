#include "igo/commands.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>

int main(int argc, char **argv)
{
    CLI::App app{"Natural-gradient search for trading-model parameters"};
    app.require_subcommand(1, 1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    std::optional<int> threads;
    app.add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "Override the configured seed");
    app.add_option("--out", out_dir, "Override the output directory");
    app.add_option("--threads", threads, "Cap on population-evaluation threads")->check(CLI::PositiveNumber);

    app.fallthrough(); // global flags may follow the subcommand
    for (const char *name : {"bench", "optimize", "fit-em", "backtest", "gen-data"})
    {
        app.add_subcommand(name);
    }

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::ParseError &e)
    {
        const int code = app.exit(e);
        return code == 0 ? 0 : igo::app::kUsageError;
    }

    igo::app::RunConfig config;
    try
    {
        if (!config_path.empty())
        {
            config = igo::app::load_config(config_path);
        }
    }
    catch (const std::exception &e)
    {
        std::cerr << "config error: " << e.what() << '\n';
        return igo::app::kUsageError;
    }
    if (seed)
    {
        config.seed = *seed;
    }
    if (out_dir)
    {
        config.output_dir = *out_dir;
    }
    if (threads)
    {
        config.threads = *threads;
    }
    const std::string command = app.get_subcommands().front()->get_name();
    return igo::app::run_command(command, config, std::cout, std::cerr);
}
