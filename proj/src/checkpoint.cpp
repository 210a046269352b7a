#include "penrec/checkpoint.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>

namespace penrec {

namespace {

constexpr char kMagic[4] = {'P', 'R', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_i32(std::ostream& out, std::int32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_f64(std::ostream& out, double v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_string(std::ostream& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t get_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

std::int32_t get_i32(std::istream& in) {
  std::int32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

std::uint64_t get_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

double get_f64(std::istream& in) {
  double v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

std::string get_string(std::istream& in) {
  std::uint32_t n = get_u32(in);
  if (n > (1u << 20)) throw DataError("checkpoint: unreasonable string length");
  std::string s(n, '\0');
  in.read(s.data(), n);
  return s;
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);

  out.write(kMagic, 4);
  put_u32(out, kVersion);
  put_string(out, ck.spec.name);
  put_string(out, ck.alphabet_chars);
  put_i32(out, ck.spec.input_channels);
  put_i32(out, ck.spec.output_classes);
  put_u32(out, static_cast<std::uint32_t>(ck.spec.layers.size()));
  for (const auto& layer : ck.spec.layers) {
    put_u32(out, static_cast<std::uint32_t>(layer.kind));
    put_i32(out, layer.filters);
    put_i32(out, layer.kernel);
    put_i32(out, layer.units);
    put_f64(out, layer.rate);
  }
  put_u64(out, ck.params.tensors.size());
  for (const auto& t : ck.params.tensors) {
    put_string(out, t.name);
    put_u32(out, t.trainable ? 1 : 0);
    put_u64(out, static_cast<std::uint64_t>(t.value.rows()));
    put_u64(out, static_cast<std::uint64_t>(t.value.cols()));
    for (Eigen::Index i = 0; i < t.value.rows(); ++i)
      for (Eigen::Index j = 0; j < t.value.cols(); ++j) put_f64(out, t.value(i, j));
  }
  put_f64(out, ck.val_loss);
  put_i32(out, ck.epoch);
  if (!out) throw IoError("failed writing " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);

  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != std::string(kMagic, 4))
    throw DataError(path + ": not a checkpoint file");
  std::uint32_t version = get_u32(in);
  if (version != kVersion)
    throw DataError(path + ": unsupported checkpoint version " + std::to_string(version));

  Checkpoint ck;
  ck.spec.name = get_string(in);
  ck.alphabet_chars = get_string(in);
  ck.spec.input_channels = get_i32(in);
  ck.spec.output_classes = get_i32(in);
  std::uint32_t n_layers = get_u32(in);
  if (n_layers > 1024) throw DataError(path + ": unreasonable layer count");
  ck.spec.layers.resize(n_layers);
  for (auto& layer : ck.spec.layers) {
    std::uint32_t kind = get_u32(in);
    if (kind > static_cast<std::uint32_t>(LayerKind::Softmax))
      throw DataError(path + ": unknown layer kind");
    layer.kind = static_cast<LayerKind>(kind);
    layer.filters = get_i32(in);
    layer.kernel = get_i32(in);
    layer.units = get_i32(in);
    layer.rate = get_f64(in);
  }

  // Tensors must match the store the spec implies, name for name.
  ck.params = make_param_store(ck.spec);
  std::uint64_t n_tensors = get_u64(in);
  if (n_tensors != ck.params.tensors.size())
    throw DataError(path + ": tensor count does not match the model spec");
  for (auto& t : ck.params.tensors) {
    std::string name = get_string(in);
    bool trainable = get_u32(in) != 0;
    auto rows = static_cast<Eigen::Index>(get_u64(in));
    auto cols = static_cast<Eigen::Index>(get_u64(in));
    if (name != t.name || trainable != t.trainable || rows != t.value.rows() ||
        cols != t.value.cols())
      throw DataError(path + ": tensor " + name + " does not match the model spec");
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) t.value(i, j) = get_f64(in);
  }
  ck.val_loss = get_f64(in);
  ck.epoch = get_i32(in);
  if (!in) throw DataError(path + ": truncated checkpoint");
  return ck;
}

}  // namespace penrec
