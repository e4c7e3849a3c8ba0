#include "pimpnet/cli.hpp"

int main(int argc, char** argv) { return pimpnet::run_command(argc, argv); }
