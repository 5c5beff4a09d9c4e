#include "ergorisk/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "ergorisk/errors.hpp"

namespace ergorisk {
namespace {

constexpr char kMagic[] = {'E', 'R', 'G', 'K', '1'};
constexpr std::size_t kMagicSize = sizeof(kMagic);

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  bool done() const { return pos_ == bytes_.size(); }

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::string raw(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw SchemaError("checkpoint truncated while reading " + std::string(what) + " at byte " +
                        std::to_string(pos_));
    }
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const std::vector<NamedTensor>& tensors) {
  std::string out(kMagic, kMagicSize);
  for (const auto& t : tensors) {
    if (t.values.size() != ad::numel(t.shape)) {
      throw ShapeError("checkpoint entry '" + t.name + "' holds " + std::to_string(t.values.size()) +
                       " values for shape " + ad::shape_str(t.shape));
    }
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
    for (const auto d : t.shape) put_u32(out, static_cast<std::uint32_t>(d));
    for (const float v : t.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  const std::string bytes = encode_checkpoint(tensors);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

std::vector<NamedTensor> decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < kMagicSize || std::memcmp(bytes.data(), kMagic, kMagicSize) != 0) {
    throw SchemaError("not a checkpoint: missing ERGK1 magic");
  }
  const std::string body = bytes.substr(kMagicSize);
  Reader r(body);
  std::vector<NamedTensor> out;
  std::set<std::string> seen;
  while (!r.done()) {
    NamedTensor t;
    const std::uint32_t name_len = r.u32("name length");
    t.name = r.raw(name_len, "name");
    if (!seen.insert(t.name).second) throw SchemaError("checkpoint repeats parameter '" + t.name + "'");
    const std::uint32_t rank = r.u32("rank");
    std::size_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      t.shape.push_back(r.u32("dimension"));
      count *= t.shape.back();
    }
    if (count > body.size() / 4) throw SchemaError("checkpoint entry '" + t.name + "' exceeds the file size");
    t.values.resize(count);
    for (auto& v : t.values) v = std::bit_cast<float>(r.u32("values"));
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace ergorisk
