#pragma once

namespace dmg {

// Entry point for the `dmg` command-line tool; returns the process exit
// status (0 ok, 2 usage error, 3 missing checkpoint/input file, 1 other).
int cli_main(int argc, char** argv);

} // namespace dmg
