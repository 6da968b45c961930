#include "initfeat/cli.hpp"

int main(int argc, char** argv) { return initfeat::run_cli(argc, argv); }
