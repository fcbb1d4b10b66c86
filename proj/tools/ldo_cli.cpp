#include "ldo/cli.hpp"

int main(int argc, char** argv) { return ldo::cli::run(argc, argv); }
