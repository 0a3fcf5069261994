#include "adhdnet/cli.hpp"

int main(int argc, char** argv) { return adhdnet::run_cli(argc, argv); }
