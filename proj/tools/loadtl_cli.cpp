#include "cli.hpp"

int main(int argc, char** argv) { return loadtl::cli::cli_main(argc, argv); }
