#include "pillar_rcnn/weights.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "pillar_rcnn/io.hpp"
#include "pillar_rcnn/rng.hpp"
#include "pillar_rcnn/types.hpp"

namespace pillar_rcnn {

namespace {
constexpr std::string_view kMagic = "PWT1";
}

std::size_t Tensor::numel() const {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const std::vector<std::uint32_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

void WeightStore::set(const std::string& name, Tensor tensor) {
  if (tensor.values.size() != tensor.numel()) {
    throw ValidationError("tensor '" + name + "': value count " + std::to_string(tensor.values.size()) +
                          " does not match shape " + shape_to_string(tensor.shape));
  }
  tensors_[name] = std::move(tensor);
}

const Tensor& WeightStore::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ValidationError("missing weight tensor '" + name + "'");
  return it->second;
}

const Tensor& WeightStore::require(const std::string& name,
                                   const std::vector<std::uint32_t>& shape) const {
  const Tensor& t = at(name);
  if (t.shape != shape) {
    throw ValidationError("weight tensor '" + name + "' has shape " + shape_to_string(t.shape) +
                          ", expected " + shape_to_string(shape));
  }
  return t;
}

void WeightStore::set_random(const std::string& name, const std::vector<std::uint32_t>& shape,
                             std::uint32_t fan_in, std::uint64_t seed) {
  Tensor t;
  t.shape = shape;
  t.values.resize(t.numel());
  const double k = 1.0 / std::sqrt(static_cast<double>(std::max<std::uint32_t>(fan_in, 1)));
  Rng rng(derive_seed(seed, fnv1a(name)));
  for (float& v : t.values) v = static_cast<float>(rng.uniform(-k, k));
  tensors_[name] = std::move(t);
}

void WeightStore::add_random(const std::vector<WeightSpec>& specs, std::uint64_t seed) {
  for (const auto& spec : specs) set_random(spec.name, spec.shape, spec.fan_in, seed);
}

void WeightStore::validate(const std::vector<WeightSpec>& specs) const {
  for (const auto& spec : specs) require(spec.name, spec.shape);
}

std::string WeightStore::serialize() const {
  io::ByteWriter w;
  w.put_bytes(kMagic);
  w.put_u32(static_cast<std::uint32_t>(tensors_.size()));
  for (const auto& [name, t] : tensors_) {
    if (name.size() > 0xFFFF) throw ValidationError("tensor name too long: " + name.substr(0, 32));
    if (t.shape.size() > 0xFF) throw ValidationError("tensor rank too large: " + name);
    w.put_u16(static_cast<std::uint16_t>(name.size()));
    w.put_bytes(name);
    w.put_u8(static_cast<std::uint8_t>(t.shape.size()));
    for (auto d : t.shape) w.put_u32(d);
    for (float v : t.values) w.put_f32(v);
  }
  return w.bytes();
}

WeightStore WeightStore::deserialize(const std::string& bytes, const std::string& source) {
  io::ByteReader r(bytes, source);
  if (r.take(4) != kMagic) throw IoError(source + ": bad magic, expected PWT1");
  const std::uint32_t count = r.u32();
  WeightStore store;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t len = r.u16();
    std::string name(r.take(len));
    const std::uint8_t rank = r.u8();
    Tensor t;
    t.shape.resize(rank);
    for (auto& d : t.shape) d = r.u32();
    const std::size_t n = t.numel();
    if (n > r.remaining() / 4) throw IoError(source + ": tensor '" + name + "' exceeds file size");
    t.values.resize(n);
    for (auto& v : t.values) v = r.f32();
    if (store.contains(name)) throw IoError(source + ": duplicate tensor '" + name + "'");
    store.tensors_[name] = std::move(t);
  }
  if (r.remaining() != 0) throw IoError(source + ": trailing bytes after last tensor");
  return store;
}

void WeightStore::save(const std::filesystem::path& path) const {
  io::write_file_atomic(path, serialize());
}

WeightStore WeightStore::load(const std::filesystem::path& path) {
  return deserialize(io::read_file(path), path.string());
}

}  // namespace pillar_rcnn
