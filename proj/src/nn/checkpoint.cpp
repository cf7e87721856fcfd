#include "cmp/nn/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "cmp/error.hpp"
#include "cmp/image.hpp"

namespace cmp::nn {

namespace {

constexpr std::uint32_t kVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xffu));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::string str(std::size_t len) {
    need(len);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), len);
    pos_ += len;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("checkpoint_truncated", "checkpoint payload truncated");
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_tensors(std::span<const NamedTensor> tensors) {
  std::vector<std::uint8_t> out{'C', 'M', 'P', 'W'};
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const NamedTensor& t : tensors) {
    std::size_t count = 1;
    for (std::int32_t d : t.dims) {
      if (d < 0) throw InvalidArgument("tensor '" + t.name + "' has a negative dimension");
      count *= static_cast<std::size_t>(d);
    }
    if (count != t.values.size()) throw ShapeMismatch("tensor '" + t.name + "' value count does not match dims");
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    put_u32(out, static_cast<std::uint32_t>(t.dims.size()));
    for (std::int32_t d : t.dims) put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : t.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

std::vector<NamedTensor> decode_tensors(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "CMPW", 4) != 0) {
    throw FormatError("checkpoint_bad_magic", "not a CMPW tensor container");
  }
  Reader r(bytes.subspan(4));
  if (const std::uint32_t version = r.u32(); version != kVersion) {
    throw FormatError("checkpoint_bad_version", "unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t count = r.u32();
  std::vector<NamedTensor> tensors;
  for (std::uint32_t k = 0; k < count; ++k) {
    NamedTensor t;
    t.name = r.str(r.u32());
    const std::uint32_t ndims = r.u32();
    if (ndims > 8) throw FormatError("checkpoint_bad_dims", "tensor '" + t.name + "' has too many dims");
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < ndims; ++d) {
      const auto dim = static_cast<std::int32_t>(r.u32());
      if (dim < 0) throw FormatError("checkpoint_bad_dims", "tensor '" + t.name + "' has a negative dim");
      t.dims.push_back(dim);
      n *= static_cast<std::size_t>(dim);
    }
    if (n > bytes.size()) throw FormatError("checkpoint_truncated", "tensor '" + t.name + "' exceeds payload");
    t.values.resize(n);
    for (float& v : t.values) v = std::bit_cast<float>(r.u32());
    tensors.push_back(std::move(t));
  }
  if (!r.done()) throw FormatError("checkpoint_trailing_bytes", "unexpected bytes after last tensor");
  return tensors;
}

void save_checkpoint(const std::string& path, std::span<const NamedTensor> tensors, const nlohmann::json& sidecar) {
  write_file(path, encode_tensors(tensors));
  const std::string text = sidecar.dump(2);
  write_file(path + ".json", std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  LoadedCheckpoint out;
  out.tensors = decode_tensors(read_file(path));
  const auto side = read_file(path + ".json");
  try {
    out.sidecar = nlohmann::json::parse(side.begin(), side.end());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint_bad_sidecar", std::string("invalid checkpoint sidecar: ") + e.what());
  }
  return out;
}

}  // namespace cmp::nn
