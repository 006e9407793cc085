#include "pcde/cli.hpp"

int
main(int argc, char** argv)
{
  return pcde::cli::run(argc, argv);
}
