#include "lensformer/cli.hpp"

int main(int argc, char** argv) { return lensformer::cli::run(argc, argv); }
