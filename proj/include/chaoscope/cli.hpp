// cli.hpp — command-line front end.
//
// Grammar: chaoscope <spectrum|reward-mle|diverge|robustness|train|ablate>
//              --config <path> [--seed N] [--out DIR]
//
// Commands read a flat key-value config (unknown keys are errors), run the
// corresponding analysis and write CSV/JSON (and SVG where applicable) plus
// the fully resolved config into the output directory. Output files are
// written atomically and reruns with the same config and seed are
// byte-identical. Exit codes: 0 success, 1 numerical failure, 2
// configuration error.
#pragma once

#include <cstdint>
#include <string>

#include "chaoscope/config.hpp"

namespace chaoscope::cli {

void run_command(const std::string& command, const KeyValueConfig& cfg, const std::string& out_dir,
                 std::uint64_t seed);

int main_entry(int argc, char** argv);

}  // namespace chaoscope::cli
