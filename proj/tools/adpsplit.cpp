#include "adpsplit/cli.hpp"

int main(int argc, char** argv) { return adpsplit::cli::run(argc, argv); }
