// Writes the synthetic fixture corpus used by the end-to-end tests.

#include <iostream>

#include "CLI11.hpp"
#include "fixture.hpp"

int main(int argc, char** argv) {
  corpus_prune::fixture::FixtureOptions opt;
  std::string out = "fixture";
  CLI::App app{"make-fixture: synthetic corpus with precomputed embeddings"};
  app.add_option("--out", out, "Output directory");
  app.add_option("--docs", opt.docs);
  app.add_option("--subsets", opt.subsets);
  app.add_option("--dim", opt.dim);
  app.add_option("--seed", opt.seed);
  app.add_option("--shard-size", opt.shard_size);
  CLI11_PARSE(app, argc, argv);
  try {
    const auto paths = corpus_prune::fixture::write_fixture(out, opt);
    std::cout << "manifest: " << paths.manifest.string() << "\n"
              << "embeddings: " << paths.embeddings.string() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "make-fixture: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
