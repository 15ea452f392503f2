#include "bevmem/checkpoint.hpp"

#include <cstring>
#include <fstream>

BEVMEM_NS_BEGIN

namespace {

constexpr char kMagic[4] = {'B', 'V', 'M', '1'};
constexpr std::uint32_t kVersion = 1;

const std::uint32_t* crc_table() {
  static const auto table = [] {
    static std::uint32_t t[256];
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  return table;
}

void put_u16(std::vector<std::uint8_t>& buf, std::uint16_t v) {
  buf.push_back(static_cast<std::uint8_t>(v & 0xFF));
  buf.push_back(static_cast<std::uint8_t>(v >> 8));
}
void put_u32(std::vector<std::uint8_t>& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}
void put_f32(std::vector<std::uint8_t>& buf, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(buf, bits);
}

struct Reader {
  const std::vector<std::uint8_t>& buf;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > buf.size()) throw CheckpointError("corrupt checkpoint: truncated file");
  }
  std::uint16_t u16() {
    need(2);
    const std::uint16_t v = static_cast<std::uint16_t>(buf[pos] | (buf[pos + 1] << 8));
    pos += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint8_t u8() {
    need(1);
    return buf[pos++];
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
    pos += n;
    return s;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
};

}  // namespace

std::uint32_t crc32(const std::uint8_t* data, std::size_t n, std::uint32_t seed) {
  const std::uint32_t* t = crc_table();
  std::uint32_t c = seed ^ 0xFFFFFFFFu;
  for (std::size_t i = 0; i < n; ++i) c = t[(c ^ data[i]) & 0xFF] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

void save_checkpoint(const ModelParams& params, const std::string& path) {
  const auto tensors = params.named_tensors();
  std::vector<std::uint8_t> buf;
  buf.insert(buf.end(), kMagic, kMagic + 4);
  put_u32(buf, kVersion);
  put_u32(buf, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, tensor] : tensors) {
    put_u16(buf, static_cast<std::uint16_t>(name.size()));
    buf.insert(buf.end(), name.begin(), name.end());
    buf.push_back(static_cast<std::uint8_t>(tensor->shape.size()));
    for (int d : tensor->shape) put_u32(buf, static_cast<std::uint32_t>(d));
    for (real v : tensor->v) put_f32(buf, static_cast<float>(v));
  }
  put_u32(buf, crc32(buf.data(), buf.size()));

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

std::vector<std::pair<std::string, Tensor>> load_checkpoint_raw(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read checkpoint " + path);
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
  if (buf.size() < 16) throw CheckpointError("corrupt checkpoint: truncated file");
  if (std::memcmp(buf.data(), kMagic, 4) != 0)
    throw CheckpointError("corrupt checkpoint: bad magic");
  const std::uint32_t stored_crc =
      static_cast<std::uint32_t>(buf[buf.size() - 4]) |
      (static_cast<std::uint32_t>(buf[buf.size() - 3]) << 8) |
      (static_cast<std::uint32_t>(buf[buf.size() - 2]) << 16) |
      (static_cast<std::uint32_t>(buf[buf.size() - 1]) << 24);
  if (crc32(buf.data(), buf.size() - 4) != stored_crc)
    throw CheckpointError("corrupt checkpoint: CRC mismatch");

  Reader r{buf};
  r.pos = 4;
  if (r.u32() != kVersion) throw CheckpointError("corrupt checkpoint: unsupported version");
  const std::uint32_t count = r.u32();
  std::vector<std::pair<std::string, Tensor>> out;
  out.reserve(count);
  const std::size_t payload_end = buf.size() - 4;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t name_len = r.u16();
    const std::string name = r.str(name_len);
    const std::uint8_t rank = r.u8();
    std::vector<int> shape(rank);
    for (int d = 0; d < rank; ++d) shape[static_cast<std::size_t>(d)] = static_cast<int>(r.u32());
    Tensor t(shape);
    for (real& v : t.v) v = static_cast<real>(r.f32());
    out.emplace_back(name, std::move(t));
  }
  if (r.pos != payload_end) throw CheckpointError("corrupt checkpoint: trailing bytes");
  return out;
}

void load_checkpoint(ModelParams& params, const std::string& path) {
  const auto loaded = load_checkpoint_raw(path);
  std::vector<Param*> dst = params.all();
  if (loaded.size() != dst.size())
    throw CheckpointError("checkpoint lists " + std::to_string(loaded.size()) +
                          " tensors, config expects " + std::to_string(dst.size()));
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (loaded[i].first != dst[i]->name)
      throw CheckpointError("checkpoint tensor '" + loaded[i].first + "' where '" +
                            dst[i]->name + "' expected");
    if (loaded[i].second.shape != dst[i]->value.shape)
      throw CheckpointError("checkpoint tensor '" + loaded[i].first + "' has shape " +
                            shape_str(loaded[i].second.shape) + ", config expects " +
                            shape_str(dst[i]->value.shape));
    dst[i]->value = loaded[i].second;
  }
}

BEVMEM_NS_END
