// Writes synthetic stats JSONL for every model in an architecture registry.
//
//   synth_stats data/pythia_arch.json out.jsonl [seed] [model_id...]

#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "ma/synthetic.hpp"

int main(int argc, char** argv) {
  if (argc < 3) {
    std::cerr << "usage: synth_stats <registry.json> <out.jsonl> [seed] [model_id...]\n";
    return 1;
  }
  try {
    std::ifstream reg(argv[1]);
    if (!reg) throw ma::Error(ma::ErrorKind::not_found, std::string("cannot open ") + argv[1]);
    const auto registry = ma::parse_arch_registry(reg);
    const std::uint64_t seed = argc > 3 ? std::stoull(argv[3]) : 0;
    const std::vector<std::string> only(argv + std::min(argc, 4), argv + argc);
    const auto steps = ma::synthetic_checkpoints();
    std::ofstream out(argv[2]);
    std::size_t n = 0;
    for (const auto& a : registry) {
      if (!only.empty() && std::find(only.begin(), only.end(), a.model_id) == only.end()) continue;
      const auto records = ma::synthetic_stats(a, steps, seed);
      ma::write_stats_lines(out, records);
      n += records.size();
    }
    std::cerr << "wrote " << n << " records to " << argv[2] << "\n";
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }
  return 0;
}
