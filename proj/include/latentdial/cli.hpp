#pragma once

// Command-line entry point: train, generate, chat, eval, export-latents,
// inspect and synth. Global flags: --config, --preset, --seed, --checkpoint,
// --out, --set key=value.

#include <iostream>
#include <string>
#include <vector>

namespace latentdial {

// args excludes the program name. Returns the process exit status.
int run_cli(const std::vector<std::string>& args, std::istream& in = std::cin, std::ostream& out = std::cout,
            std::ostream& err = std::cerr);

}  // namespace latentdial
