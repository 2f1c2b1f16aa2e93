// Writes the synthetic reversal corpus: {train,dev,test}.{src,tgt}.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <string>

#include "bmtl/error.hpp"
#include "bmtl/toy.hpp"
#include "bmtl/util.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate the toy parallel corpus"};
  std::string out = "data/toy";
  std::size_t train = 300, dev = 50, test = 50;
  bmtl::toy::ToyOptions opt;
  app.add_option("--output", out, "output directory");
  app.add_option("--train", train, "training pairs");
  app.add_option("--dev", dev, "dev pairs");
  app.add_option("--test", test, "test pairs");
  app.add_option("--seed", opt.seed, "generator seed");
  app.add_option("--lexicon", opt.lexicon_size, "distinct source words");
  app.add_option("--alphabet", opt.alphabet_size, "letters per side")->check(CLI::Range(1, 13));
  CLI11_PARSE(app, argc, argv);

  try {
    std::filesystem::create_directories(out);
    const std::pair<const char*, std::size_t> splits[] = {{"train", train}, {"dev", dev}, {"test", test}};
    std::uint64_t stream = 0;
    for (const auto& [name, n] : splits) {
      const auto text = bmtl::toy::generate(n, opt, stream++);
      bmtl::write_lines(out + "/" + name + ".src", text.source);
      bmtl::write_lines(out + "/" + name + ".tgt", text.target);
    }
  } catch (const std::exception& e) {
    std::cerr << "make_toy: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
