#include "chaoscope/cli.hpp"

int main(int argc, char** argv) { return chaoscope::cli::main_entry(argc, argv); }
