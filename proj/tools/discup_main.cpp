#include "discup/cli.hpp"

int main(int argc, char** argv) { return discup::cli_main(argc, argv); }
