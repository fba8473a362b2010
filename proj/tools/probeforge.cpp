#include "probeforge/cli.hpp"

int main(int argc, char** argv) { return probeforge::run_cli(argc, argv); }
