#include "aped/binary_io.hpp"
#include "aped/error.hpp"
#include "aped/tensor.hpp"

namespace aped::ag {

namespace {
constexpr std::string_view kCheckpointMagic = "APEDCKPT";
}

std::vector<char> serialize_checkpoint(const NamedTensors& tensors) {
  io::ByteWriter w;
  w.bytes(kCheckpointMagic);
  w.u8(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  // std::map iterates in byte-wise name order.
  for (const auto& [name, t] : tensors) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (double v : t.values()) w.f64(v);
  }
  return w.buffer();
}

void save_checkpoint(const NamedTensors& tensors, const std::string& path) {
  io::write_file(path, serialize_checkpoint(tensors));
}

NamedTensors load_checkpoint(const std::string& path) {
  const auto data = io::read_file(path);
  io::ByteReader r(data.data(), data.size(), path);
  if (data.size() < kCheckpointMagic.size() || r.bytes(kCheckpointMagic.size()) != kCheckpointMagic) {
    throw FormatError(path + ": not a checkpoint (bad magic)");
  }
  const auto version = r.u8();
  if (version != kCheckpointVersion) throw FormatError(path + ": unsupported checkpoint version " + std::to_string(version));
  const auto count = r.u32();
  NamedTensors out;
  for (std::uint32_t e = 0; e < count; ++e) {
    const auto name_len = r.u32();
    std::string name(r.bytes(name_len));
    const auto rank = r.u32();
    if (rank > 2) throw FormatError(path + ": entry '" + name + "' has unsupported rank " + std::to_string(rank));
    Shape shape;
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape.push_back(static_cast<int>(r.u32()));
      n *= static_cast<std::size_t>(shape.back());
    }
    if (n * 8 > r.remaining()) throw FormatError(path + ": truncated payload");
    std::vector<double> values(n);
    for (auto& v : values) v = r.f64();
    if (!out.emplace(name, Tensor::from(std::move(shape), std::move(values))).second) {
      throw FormatError(path + ": duplicate entry '" + name + "'");
    }
  }
  if (r.remaining() != 0) throw FormatError(path + ": trailing bytes after last entry");
  return out;
}

}  // namespace aped::ag
