#include <qvi/cli.hpp>

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
    CLI::App app{"qvi: double-obstacle QVI solver and verification tool"};
    qvi::cli::Options o;
    app.add_option("command", o.command, "validate | solve | iterate | verify | report")
        ->required()
        ->check(CLI::IsMember({"validate", "solve", "iterate", "verify", "report"}));
    app.add_option("--config", o.config_path, "model file");
    app.add_option("--out", o.out_dir, "output directory");
    std::uint64_t seed = 0;
    int n = 0;
    std::string mode, check;
    auto* seed_opt = app.add_option("--seed", seed, "random seed");
    auto* n_opt = app.add_option("--n", n, "penalty level");
    auto* mode_opt = app.add_option("--mode", mode, "penalized | double")
                         ->check(CLI::IsMember({"penalized", "double"}));
    auto* check_opt = app.add_option("--check", check, "consistency | domination | moments | dualgap | oracle")
                          ->check(CLI::IsMember({"consistency", "domination", "moments", "dualgap", "oracle"}));
    CLI11_PARSE(app, argc, argv);
    if (o.command != "report" && o.config_path.empty()) {
        std::cerr << "FAIL " << o.command << " --config is required\n";
        return 2;
    }
    if (*seed_opt) o.seed = seed;
    if (*n_opt) o.n = n;
    if (*mode_opt) o.mode = mode;
    if (*check_opt) o.check = check;
    return qvi::cli::run(o, std::cout, std::cerr);
}
