#include "ug/cli.hpp"

int main(int argc, char** argv) { return ug::cli_run(argc, argv); }
