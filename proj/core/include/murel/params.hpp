#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "murel/tensor.hpp"

namespace murel {

/// Seeded generator shared by every initializer and sampler in the project.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double normal(double mean, double stddev) { return std::normal_distribution<double>(mean, stddev)(engine_); }
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

/// Glorot-uniform [rows x cols] trainable matrix.
Tensor glorot(std::size_t rows, std::size_t cols, Rng& rng);
/// Uniform(-scale, scale) tensor of the given shape, trainable.
Tensor uniform_param(Shape shape, double scale, Rng& rng);

/// Ordered name -> parameter registry; insertion order is the canonical order.
class ParamStore {
 public:
  void add(std::string name, Tensor tensor);
  bool contains(const std::string& name) const;
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);

  std::size_t size() const { return entries_.size(); }
  std::size_t parameter_count() const;
  /// Sum of element counts for names starting with `prefix`.
  std::size_t parameter_count(const std::string& prefix) const;

  std::vector<Tensor> tensors() const;
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }

  void zero_grad();
  void fill(double value);

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

/// JSON object {name: {"shape": [...], "data": [...]}} in registry order.
std::string checkpoint_to_string(const ParamStore& store);
/// Copies values from a checkpoint document into `store`; names and shapes must match exactly.
void checkpoint_from_string(const std::string& text, ParamStore& store);

/// Writes via a temporary file and rename so readers never see a partial checkpoint.
void save_checkpoint(const ParamStore& store, const std::filesystem::path& path);
void load_checkpoint(const std::filesystem::path& path, ParamStore& store);

/// Atomically replaces `path` with `contents`.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace murel
