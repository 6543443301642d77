#include <posefield/cli.hpp>

int main(int argc, char** argv) { return posefield::cli_main(argc, argv); }
