#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace pillar_rcnn {

/// Expected name, shape and initialization fan-in of one parameter tensor.
struct WeightSpec {
  std::string name;
  std::vector<std::uint32_t> shape;
  std::uint32_t fan_in = 1;
};

/// A named parameter tensor: shape plus row-major f32 values.
struct Tensor {
  std::vector<std::uint32_t> shape;
  std::vector<float> values;

  std::size_t numel() const;
};

std::string shape_to_string(const std::vector<std::uint32_t>& shape);

/// Name -> tensor archive backing every convolution and linear layer.
///
/// Layout conventions: convolution kernels are [kh, kw, cin, cout]; linear layers are
/// [out, in]; biases are [out]. The on-disk format is
///   "PWT1", u32 count, then per tensor: u16 name length, name bytes, u8 rank,
///   rank x u32 dims, prod(dims) x f32 (all little-endian).
class WeightStore {
 public:
  void set(const std::string& name, Tensor tensor);
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }

  /// Throws ValidationError when the name is absent.
  const Tensor& at(const std::string& name) const;

  /// Throws ValidationError when the name is absent or the shape differs.
  const Tensor& require(const std::string& name, const std::vector<std::uint32_t>& shape) const;

  /// Seeded uniform(-k, k) tensor with k = 1/sqrt(fan_in), keyed on (seed, name) so the
  /// values do not depend on insertion order.
  void set_random(const std::string& name, const std::vector<std::uint32_t>& shape,
                  std::uint32_t fan_in, std::uint64_t seed);

  /// Fills every spec with set_random.
  void add_random(const std::vector<WeightSpec>& specs, std::uint64_t seed);

  /// Throws ValidationError naming the first missing or mis-shaped tensor.
  void validate(const std::vector<WeightSpec>& specs) const;

  const std::map<std::string, Tensor>& tensors() const { return tensors_; }
  std::size_t size() const { return tensors_.size(); }

  std::string serialize() const;
  static WeightStore deserialize(const std::string& bytes, const std::string& source = "<memory>");

  void save(const std::filesystem::path& path) const;
  static WeightStore load(const std::filesystem::path& path);

 private:
  std::map<std::string, Tensor> tensors_;
};

}  // namespace pillar_rcnn
