#include <CLI11.hpp>

#include <cstdio>

// Command-line front end. Subcommands are registered as the library grows;
// each one lives in its own setup function below.

int main(int argc, char** argv) {
    CLI::App app{"treeseg: tree crown instance segmentation toolkit"};
    app.require_subcommand(1);

    CLI11_PARSE(app, argc, argv);
    return 0;
}
