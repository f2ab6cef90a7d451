#include "skemb/cli.hpp"

int main(int argc, char** argv) { return skemb::cli_main(argc, argv); }
