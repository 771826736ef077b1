#include "msdn/cli.hpp"

int main(int argc, char** argv) { return msdn::cli_main(argc, argv); }
