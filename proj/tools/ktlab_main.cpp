// ktlab: command-line driver for the kinetic theory lab.
// Subcommands are registered as the corresponding modules land; run with
// --help for the current list.

#include <CLI11.hpp>

#include <cstdio>

int main(int argc, char** argv) {
    CLI::App app{"kinetic theory lab"};
    app.require_subcommand(0, 1);

    CLI11_PARSE(app, argc, argv);
    if (app.get_subcommands().empty()) {
        std::puts("no subcommand given; see --help");
        return 1;
    }
    return 0;
}
