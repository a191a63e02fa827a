#include "dkd/cli.hpp"

int main(int argc, char** argv) { return dkd::run_cli(argc, argv); }
