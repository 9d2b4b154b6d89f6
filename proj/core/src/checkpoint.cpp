#include "sfit/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace sfit::models {
namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& e : entries) {
    if (e.name == name) return &e.value;
  }
  return nullptr;
}

bool operator==(const NamedTensor& a, const NamedTensor& b) { return a.name == b.name && a.value == b.value; }

namespace {

template <class T>
void put(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  template <class T>
  T get(const char* what) {
    T v;
    read(&v, sizeof(T), what);
    return v;
  }

  void read(void* dst, std::size_t n, const char* what) {
    if (pos_ + n > bytes_.size()) {
      throw Error(Errc::TruncatedFile, std::string("checkpoint ends while reading ") + what + " at byte " +
                                           std::to_string(pos_));
    }
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.entries.size()));
  for (const auto& e : ckpt.entries) {
    if (e.name.size() > UINT16_MAX) throw Error(Errc::InvalidConfig, "tensor name too long");
    put<std::uint16_t>(out, static_cast<std::uint16_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    put<std::uint8_t>(out, static_cast<std::uint8_t>(e.value.rank()));
    for (int d : e.value.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    const auto* p = reinterpret_cast<const std::uint8_t*>(e.value.data());
    out.insert(out.end(), p, p + e.value.size() * sizeof(float));
  }
  return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  char magic[8];
  r.read(magic, 8, "magic");
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0) throw Error(Errc::BadMagic, "not an SFITCKPT file");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw Error(Errc::VersionUnsupported, "checkpoint version " + std::to_string(version));
  }
  const auto count = r.get<std::uint32_t>("tensor count");
  Checkpoint ckpt;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor e;
    e.name.resize(r.get<std::uint16_t>("name length"));
    r.read(e.name.data(), e.name.size(), "name");
    Shape shape(r.get<std::uint8_t>("rank"));
    for (auto& d : shape) d = static_cast<int>(r.get<std::uint32_t>("dims"));
    std::vector<float> payload(shape_size(shape));
    r.read(payload.data(), payload.size() * sizeof(float), "payload");
    e.value = Tensor(std::move(shape), std::move(payload));
    ckpt.entries.push_back(std::move(e));
  }
  if (!r.done()) throw Error(Errc::SizeMismatch, "trailing bytes after the last tensor");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
  const auto bytes = encode_checkpoint(ckpt);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::IoError, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(Errc::IoError, "short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_checkpoint(bytes);
}

std::uint64_t fingerprint(const Checkpoint& ckpt) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto feed = [&](const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ull;
    }
  };
  for (const auto& e : ckpt.entries) {
    feed(e.name.data(), e.name.size());
    for (int d : e.value.shape()) feed(&d, sizeof d);
    feed(e.value.data(), e.value.size() * sizeof(float));
  }
  return h;
}

}  // namespace sfit::models
