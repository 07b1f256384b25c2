#include <iostream>
#include <string>
#include <vector>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "cbe/cli.hpp"

int main(int argc, char** argv) {
  // Results go to stdout; keep log lines on stderr.
  spdlog::set_default_logger(spdlog::stderr_color_mt("cbe"));
  std::vector<std::string> args(argv + 1, argv + argc);
  return cbe::run_cli(args, std::cout, std::cerr);
}
