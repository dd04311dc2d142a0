#include <qdt/cli.hpp>

int main(int argc, char** argv) { return qdt::cli::run_cli(argc, argv); }
