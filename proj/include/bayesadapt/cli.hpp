#pragma once

#include <iosfwd>

namespace bayesadapt {

// Subcommands: generate, train-source, adapt, run, report, check.
int cli_main(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace bayesadapt
