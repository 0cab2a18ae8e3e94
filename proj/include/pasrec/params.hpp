#pragma once

// Named parameter tensors, their binding onto a Tape, and the checkpoint container.

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "pasrec/autodiff.hpp"

namespace pasrec {

struct Tensor {
  std::string name;
  std::string group;  // gradient-check / reporting group
  Matrix value;
};

class ParameterStore {
 public:
  Tensor& add(std::string name, std::string group, Matrix value);

  bool contains(const std::string& name) const { return index_.contains(name); }
  size_t index_of(const std::string& name) const;
  Matrix& value(const std::string& name) { return tensors_[index_of(name)].value; }
  const Matrix& value(const std::string& name) const { return tensors_[index_of(name)].value; }

  std::vector<Tensor>& tensors() { return tensors_; }
  const std::vector<Tensor>& tensors() const { return tensors_; }
  size_t size() const { return tensors_.size(); }
  size_t scalar_count() const;
  std::vector<std::string> groups() const;

  bool all_finite() const;
  bool same_shapes(const ParameterStore& other) const;

 private:
  std::vector<Tensor> tensors_;
  std::unordered_map<std::string, size_t> index_;
};

/// Parameters placed on one Tape. Trainable bindings create leaves for every
/// tensor up front; frozen bindings create constants lazily, and `gather`
/// copies only the requested rows so evaluation never copies whole tables.
class Binding {
 public:
  Binding(const ParameterStore& store, ad::Tape& tape, bool trainable);

  ad::Var operator[](const std::string& name) const;
  ad::Var gather(const std::string& name, std::span<const int> rows) const;
  ad::Tape& tape() const { return *tape_; }
  bool trainable() const { return trainable_; }
  const ParameterStore& store() const { return *store_; }
  /// Leaf for tensor i; only valid on trainable bindings.
  ad::Var leaf(size_t i) const { return vars_[i]; }

 private:
  const ParameterStore* store_;
  ad::Tape* tape_;
  bool trainable_;
  mutable std::vector<ad::Var> vars_;
};

/// Initialization draws, in tensor order, from one mt19937_64.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}
  Matrix uniform(Eigen::Index rows, Eigen::Index cols, double bound);
  static Matrix zeros(Eigen::Index rows, Eigen::Index cols) { return Matrix::Zero(rows, cols); }
  static Matrix ones(Eigen::Index rows, Eigen::Index cols) { return Matrix::Ones(rows, cols); }

 private:
  std::mt19937_64 rng_;
};

/// Versioned binary container: magic, format version, JSON header length, JSON
/// header (free-form metadata plus the tensor index), then raw little-endian doubles.
struct Checkpoint {
  static constexpr char kMagic[8] = {'P', 'A', 'S', 'R', 'E', 'C', 'K', '1'};
  static constexpr std::uint32_t kVersion = 1;

  nlohmann::json meta;
  ParameterStore params;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace pasrec
