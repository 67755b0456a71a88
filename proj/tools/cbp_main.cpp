#include "cbp/cli.hpp"

int main(int argc, char** argv) { return cbp::run_cli(argc, argv); }
