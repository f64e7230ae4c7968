#include "changeseg/cli.hpp"

int main(int argc, char** argv) { return changeseg::cli_main(argc, argv); }
