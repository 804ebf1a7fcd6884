#include "karat/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "karat/error.hpp"

namespace karat {

namespace {

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }

  std::uint8_t u8(const char* what) {
    need(1, what);
    return bytes_[pos_++];
  }

  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  [[noreturn]] void fail(const std::string& msg) const {
    throw FormatError("checkpoint: " + msg + " at byte offset " + std::to_string(pos_));
  }

 private:
  void need(std::size_t n, const char* what) {
    if (remaining() < n) fail(std::string("truncated ") + what);
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const std::vector<NamedTensor>& entries) {
  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 6);
  out.push_back(kCheckpointVersion);
  put_u64(out, entries.size());
  for (const auto& e : entries) {
    put_u64(out, e.name.size());
    out.insert(out.end(), e.name.begin(), e.name.end());
    put_u64(out, e.tensor.rank());
    for (std::size_t d : e.tensor.shape()) put_u64(out, d);
    for (double v : e.tensor.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

std::vector<NamedTensor> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader in(bytes);
  if (in.str(6, "magic") != std::string(kCheckpointMagic, 6)) {
    throw FormatError("checkpoint: bad magic at byte offset 0");
  }
  const std::uint8_t version = in.u8("version");
  if (version != kCheckpointVersion) in.fail("unsupported version " + std::to_string(version));
  const std::uint64_t count = in.u64("entry count");
  std::vector<NamedTensor> entries;
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint64_t name_len = in.u64("name length");
    if (name_len > in.remaining()) in.fail("name length exceeds file");
    NamedTensor e;
    e.name = in.str(name_len, "name");
    const std::uint64_t rank = in.u64("rank");
    if (rank > 16) in.fail("implausible rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& d : shape) d = in.u64("extent");
    const std::size_t n = shape_size(shape);
    if (n > in.remaining() / 8) in.fail("tensor '" + e.name + "' exceeds file");
    std::vector<double> data(n);
    for (auto& v : data) v = std::bit_cast<double>(in.u64("value"));
    e.tensor = Tensor(std::move(shape), std::move(data));
    entries.push_back(std::move(e));
  }
  if (in.remaining() != 0) in.fail("trailing bytes");
  return entries;
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& entries) {
  const auto bytes = encode_checkpoint(entries);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("short write to " + path.string());
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_checkpoint(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

const Tensor& find_entry(const std::vector<NamedTensor>& entries, const std::string& name) {
  for (const auto& e : entries) {
    if (e.name == name) return e.tensor;
  }
  throw FormatError("checkpoint has no entry '" + name + "'");
}

}  // namespace karat
