#include <string>
#include <vector>

#include "corpus_prune/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return corpus_prune::cli::run(args);
}
