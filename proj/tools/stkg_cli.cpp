#include "stkg/cli.hpp"

int main(int argc, char** argv) { return stkg::cli::run(argc, argv); }
