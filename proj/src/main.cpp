#include "linlab/cli.hpp"

int main(int argc, char** argv) { return linlab::run_cli(argc, argv); }
