#include "ecgxai/cli/cli.hpp"

int main(int argc, char** argv) { return ecgxai::cli::run(argc, argv); }
