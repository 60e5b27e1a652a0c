#include "dmg/cli.hpp"

int main(int argc, char** argv) { return dmg::cli_main(argc, argv); }
