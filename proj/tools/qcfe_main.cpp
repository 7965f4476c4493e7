#include "qcfe/cli.hpp"

int main(int argc, char** argv) { return qcfe::run_cli(argc, argv); }
