#include "cli.hpp"

int main(int argc, char** argv) { return msamseg::cli::run(argc, argv); }
