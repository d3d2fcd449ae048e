#pragma once

namespace msamseg::cli {

// Entry point of the msamseg command. Exit codes: 0 success, 1 check or
// runtime failure, 2 usage or configuration error.
int run(int argc, char** argv);

}  // namespace msamseg::cli
