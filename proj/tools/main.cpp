#include "sparsedyn/cli.hpp"

int main(int argc, char** argv) { return sparsedyn::cli::run(argc, argv); }
