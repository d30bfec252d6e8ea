#include "ptl/cli.hpp"

int main(int argc, char** argv) { return ptl::run_cli(argc, argv); }
