#pragma once

#include <filesystem>
#include <string>

#include "paramrel/nn/tensor.hpp"
#include "paramrel/random.hpp"

namespace test_support {

inline paramrel::nn::Tensor random_tensor(paramrel::nn::Shape shape, paramrel::Rng& rng, double scale = 1.0) {
  paramrel::nn::Tensor t(std::move(shape));
  for (double& v : t.data()) v = scale * rng.normal();
  return t;
}

// Fresh scratch directory under the system temp dir, emptied on creation.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("paramrel_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace test_support
