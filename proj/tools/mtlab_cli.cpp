#include "mtlab/cli_runner.hpp"

int main(int argc, char** argv) { return mtlab::cli::run(argc, argv); }
