#include "mathlm/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <iterator>

#include <zlib.h>

#include "mathlm/errors.hpp"

namespace mathlm {

namespace {

constexpr std::string_view kMagic = "MLM1";

std::size_t element_size(ElementKind k) { return k == ElementKind::F32 ? 4 : 8; }

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename U>
U get_le(const std::uint8_t* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

void put_string(std::vector<std::uint8_t>& out, std::string_view s) {
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename U>
  U read() {
    need(sizeof(U));
    const U v = get_le<U>(bytes_.data() + pos_);
    pos_ += sizeof(U);
    return v;
  }

  std::span<const std::uint8_t> take(std::uint64_t n) {
    need(n);
    auto s = bytes_.subspan(pos_, static_cast<std::size_t>(n));
    pos_ += static_cast<std::size_t>(n);
    return s;
  }

  std::string string() {
    const auto s = take(read<std::uint32_t>());
    return {s.begin(), s.end()};
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > bytes_.size() - pos_) throw FormatError("checkpoint truncated");
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

template <typename V, typename U>
TensorRecord make_record(std::string name, ElementKind kind, std::vector<std::uint64_t> shape,
                         std::span<const V> values) {
  TensorRecord r{std::move(name), kind, std::move(shape), {}};
  if (r.element_count() != values.size()) {
    throw ShapeMismatch("record '" + r.name + "' shape does not match its element count");
  }
  r.payload.reserve(values.size() * sizeof(U));
  for (V v : values) put_le<U>(r.payload, std::bit_cast<U>(v));
  return r;
}

template <typename V, typename U>
std::vector<V> read_record(const TensorRecord& r, ElementKind want) {
  if (r.kind != want) throw FormatError("record '" + r.name + "' has a different element kind");
  std::vector<V> out(r.payload.size() / sizeof(U));
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::bit_cast<V>(get_le<U>(r.payload.data() + i * sizeof(U)));
  }
  return out;
}

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, bytes.data(), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

TensorRecord TensorRecord::from_f32(std::string name, std::vector<std::uint64_t> shape,
                                    std::span<const float> values) {
  return make_record<float, std::uint32_t>(std::move(name), ElementKind::F32, std::move(shape),
                                           values);
}

TensorRecord TensorRecord::from_f64(std::string name, std::vector<std::uint64_t> shape,
                                    std::span<const double> values) {
  return make_record<double, std::uint64_t>(std::move(name), ElementKind::F64, std::move(shape),
                                            values);
}

TensorRecord TensorRecord::from_i64(std::string name, std::vector<std::uint64_t> shape,
                                    std::span<const std::int64_t> values) {
  return make_record<std::int64_t, std::uint64_t>(std::move(name), ElementKind::I64,
                                                  std::move(shape), values);
}

std::uint64_t TensorRecord::element_count() const {
  std::uint64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::vector<float> TensorRecord::to_f32() const {
  return read_record<float, std::uint32_t>(*this, ElementKind::F32);
}
std::vector<double> TensorRecord::to_f64() const {
  return read_record<double, std::uint64_t>(*this, ElementKind::F64);
}
std::vector<std::int64_t> TensorRecord::to_i64() const {
  return read_record<std::int64_t, std::uint64_t>(*this, ElementKind::I64);
}

void Checkpoint::set(std::string key, std::string value) {
  if (key.find_first_of("=\n") != std::string::npos || value.find('\n') != std::string::npos) {
    throw FormatError("config entries cannot contain newlines or '=' in keys");
  }
  for (auto& [k, v] : config) {
    if (k == key) {
      v = std::move(value);
      return;
    }
  }
  config.emplace_back(std::move(key), std::move(value));
}

bool Checkpoint::has(std::string_view key) const {
  for (const auto& [k, v] : config) {
    if (k == key) return true;
  }
  return false;
}

const std::string& Checkpoint::get(std::string_view key) const {
  for (const auto& [k, v] : config) {
    if (k == key) return v;
  }
  throw FormatError("checkpoint config lacks '" + std::string(key) + "'");
}

const TensorRecord& Checkpoint::record(std::string_view name) const {
  for (const auto& r : records) {
    if (r.name == name) return r;
  }
  throw FormatError("checkpoint lacks record '" + std::string(name) + "'");
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> out(kMagic.begin(), kMagic.end());
  put_string(out, ckpt.kind);
  std::string text;
  for (const auto& [k, v] : ckpt.config) text += k + "=" + v + "\n";
  put_string(out, text);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.records.size()));
  for (const auto& r : ckpt.records) {
    if (r.payload.size() != r.element_count() * element_size(r.kind)) {
      throw FormatError("record '" + r.name + "' payload does not match its shape");
    }
    put_string(out, r.name);
    out.push_back(static_cast<std::uint8_t>(r.kind));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(r.shape.size()));
    for (auto d : r.shape) put_le<std::uint64_t>(out, d);
    out.insert(out.end(), r.payload.begin(), r.payload.end());
  }
  put_le<std::uint32_t>(out, crc32_of(std::span(out).subspan(kMagic.size())));
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kMagic.size() + 4 ||
      !std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
    throw FormatError("not a checkpoint (bad magic)");
  }
  const auto body = bytes.subspan(kMagic.size(), bytes.size() - kMagic.size() - 4);
  if (get_le<std::uint32_t>(bytes.data() + bytes.size() - 4) != crc32_of(body)) {
    throw ChecksumMismatch();
  }

  Reader in(body);
  Checkpoint ckpt;
  ckpt.kind = in.string();
  const std::string text = in.string();
  std::size_t start = 0;
  while (start < text.size()) {
    const std::size_t end = text.find('\n', start);
    if (end == std::string::npos) throw FormatError("config block lacks a final newline");
    const std::string line = text.substr(start, end - start);
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("config line without '=': " + line);
    ckpt.config.emplace_back(line.substr(0, eq), line.substr(eq + 1));
    start = end + 1;
  }
  const auto count = in.read<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorRecord r;
    r.name = in.string();
    const auto kind = in.read<std::uint8_t>();
    if (kind > static_cast<std::uint8_t>(ElementKind::I64)) {
      throw FormatError("record '" + r.name + "' has unknown element kind");
    }
    r.kind = static_cast<ElementKind>(kind);
    const auto rank = in.read<std::uint32_t>();
    if (rank > 8) throw FormatError("record '" + r.name + "' rank too large");
    for (std::uint32_t d = 0; d < rank; ++d) r.shape.push_back(in.read<std::uint64_t>());
    const auto payload = in.take(r.element_count() * element_size(r.kind));
    r.payload.assign(payload.begin(), payload.end());
    ckpt.records.push_back(std::move(r));
  }
  if (!in.done()) throw FormatError("trailing bytes after the last record");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace mathlm
