#include <torch/torch.h>

#include <iostream>

#include "cli.hpp"

int main(int argc, char** argv) {
  torch::set_num_threads(1);
  return compass::cli::run({argv, argv + argc}, std::cout, std::cerr);
}
