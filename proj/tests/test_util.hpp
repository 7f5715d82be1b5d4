#pragma once

#include <filesystem>
#include <string>

#include "wslc/rng.hpp"
#include "wslc/tensor.hpp"

namespace wslc::test {

template <typename T>
BasicTensor<T> random_batch(std::size_t n, std::size_t c, std::size_t h, std::size_t w, std::uint64_t seed) {
  BasicTensor<T> t({n, c, h, w});
  Rng rng(seed);
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform());
  return t;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("wslc_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace wslc::test
