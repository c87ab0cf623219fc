#include "charadial/cli/cli.hpp"

int main(int argc, char** argv) { return charadial::cli::run(argc, argv); }
