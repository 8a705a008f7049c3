#include "pivotkit/cli.hpp"

int main(int argc, char** argv) { return pivotkit::cli::run_cli(argc, argv); }
