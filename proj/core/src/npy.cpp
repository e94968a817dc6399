#include "enlfcn/npy.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace enlfcn {

static_assert(std::endian::native == std::endian::little, "NPY I/O assumes a little-endian host");

namespace {

constexpr char kMagic[] = "\x93NUMPY";
constexpr std::size_t kMagicLen = 6;
constexpr std::size_t kPreamble = 10;  // magic + version + u16 header length

[[noreturn]] void fail(std::size_t offset, const std::string& what) {
  throw FormatError("npy: " + what + " (byte offset " + std::to_string(offset) + ")");
}

std::string shape_tuple(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    os << shape[i];
    if (shape.size() == 1 || i + 1 < shape.size()) os << ',';
    if (i + 1 < shape.size()) os << ' ';
  }
  os << ')';
  return os.str();
}

// Minimal parser for the python dict literal numpy writes.
class HeaderParser {
 public:
  HeaderParser(std::string_view text, std::size_t base) : text_(text), base_(base) {}

  std::size_t find_value(std::string_view key) {
    const std::string quoted_single = "'" + std::string(key) + "'";
    const std::string quoted_double = "\"" + std::string(key) + "\"";
    std::size_t at = text_.find(quoted_single);
    std::size_t len = quoted_single.size();
    if (at == std::string_view::npos) {
      at = text_.find(quoted_double);
      len = quoted_double.size();
    }
    if (at == std::string_view::npos) fail(base_, "header lacks key '" + std::string(key) + "'");
    std::size_t p = at + len;
    skip_space(p);
    if (p >= text_.size() || text_[p] != ':') fail(base_ + p, "expected ':' after '" + std::string(key) + "'");
    ++p;
    skip_space(p);
    return p;
  }

  std::string string_value(std::string_view key) {
    std::size_t p = find_value(key);
    if (p >= text_.size() || (text_[p] != '\'' && text_[p] != '"')) fail(base_ + p, "expected quoted string");
    const char q = text_[p];
    const std::size_t end = text_.find(q, p + 1);
    if (end == std::string_view::npos) fail(base_ + p, "unterminated string");
    return std::string(text_.substr(p + 1, end - p - 1));
  }

  bool bool_value(std::string_view key) {
    std::size_t p = find_value(key);
    if (text_.substr(p, 4) == "True") return true;
    if (text_.substr(p, 5) == "False") return false;
    fail(base_ + p, "expected True or False for '" + std::string(key) + "'");
  }

  Shape shape_value(std::string_view key) {
    std::size_t p = find_value(key);
    if (p >= text_.size() || text_[p] != '(') fail(base_ + p, "expected shape tuple");
    const std::size_t end = text_.find(')', p);
    if (end == std::string_view::npos) fail(base_ + p, "unterminated shape tuple");
    Shape shape;
    std::size_t i = p + 1;
    while (i < end) {
      skip_space(i);
      if (i >= end) break;
      if (text_[i] < '0' || text_[i] > '9') fail(base_ + i, "invalid shape extent");
      std::size_t v = 0;
      while (i < end && text_[i] >= '0' && text_[i] <= '9') v = v * 10 + static_cast<std::size_t>(text_[i++] - '0');
      shape.push_back(v);
      skip_space(i);
      if (i < end && text_[i] == ',') ++i;
    }
    return shape;
  }

 private:
  void skip_space(std::size_t& p) const {
    while (p < text_.size() && (text_[p] == ' ' || text_[p] == '\t')) ++p;
  }

  std::string_view text_;
  std::size_t base_;
};

}  // namespace

std::size_t dtype_size(DType d) noexcept { return d == DType::f64 ? 8 : 4; }

const char* dtype_descr(DType d) noexcept {
  switch (d) {
    case DType::f32: return "<f4";
    case DType::f64: return "<f8";
    case DType::i32: return "<i4";
  }
  return "<f4";
}

std::string encode_npy(DType dtype, const Shape& shape, std::span<const std::byte> payload) {
  if (payload.size() != shape_size(shape) * dtype_size(dtype)) {
    throw FormatError("npy: payload size does not match shape " + shape_to_string(shape));
  }
  std::string header = std::string("{'descr': '") + dtype_descr(dtype) + "', 'fortran_order': False, 'shape': " +
                       shape_tuple(shape) + ", }";
  const std::size_t unpadded = kPreamble + header.size() + 1;
  header.append((64 - unpadded % 64) % 64, ' ');
  header.push_back('\n');
  if (header.size() > 0xFFFF) throw FormatError("npy: header too long for format version 1.0");

  std::string out;
  out.reserve(kPreamble + header.size() + payload.size());
  out.append(kMagic, kMagicLen);
  out.push_back('\x01');
  out.push_back('\x00');
  out.push_back(static_cast<char>(header.size() & 0xFF));
  out.push_back(static_cast<char>((header.size() >> 8) & 0xFF));
  out += header;
  out.append(reinterpret_cast<const char*>(payload.data()), payload.size());
  return out;
}

NpyArray decode_npy(std::span<const std::byte> file) {
  if (file.size() < kPreamble) fail(file.size(), "file truncated inside the preamble");
  if (std::memcmp(file.data(), kMagic, kMagicLen) != 0) fail(0, "bad magic string");
  const auto major = static_cast<unsigned>(file[6]);
  const auto minor = static_cast<unsigned>(file[7]);
  if (major != 1 || minor != 0) {
    fail(6, "unsupported format version " + std::to_string(major) + "." + std::to_string(minor));
  }
  const std::size_t header_len = static_cast<std::size_t>(file[8]) | (static_cast<std::size_t>(file[9]) << 8);
  if (file.size() < kPreamble + header_len) fail(file.size(), "file truncated inside the header");
  const std::string_view header(reinterpret_cast<const char*>(file.data()) + kPreamble, header_len);
  if (header.empty() || header.back() != '\n') fail(kPreamble + header_len - 1, "header not newline-terminated");

  HeaderParser parser(header, kPreamble);
  NpyArray out;
  const std::string descr = parser.string_value("descr");
  if (descr == "<f4") {
    out.dtype = DType::f32;
  } else if (descr == "<f8") {
    out.dtype = DType::f64;
  } else if (descr == "<i4") {
    out.dtype = DType::i32;
  } else {
    fail(kPreamble, "unsupported dtype '" + descr + "'");
  }
  if (parser.bool_value("fortran_order")) fail(kPreamble, "fortran_order=True arrays are not supported");
  out.shape = parser.shape_value("shape");

  const std::size_t data_at = kPreamble + header_len;
  const std::size_t expected = out.element_count() * dtype_size(out.dtype);
  if (file.size() - data_at < expected) {
    fail(file.size(), "data truncated: expected " + std::to_string(expected) + " bytes after offset " +
                          std::to_string(data_at));
  }
  if (file.size() - data_at > expected) fail(data_at + expected, "trailing bytes after array data");
  out.bytes.assign(file.begin() + static_cast<std::ptrdiff_t>(data_at), file.end());
  return out;
}

template <typename T>
Tensor<T> NpyArray::to_tensor() const {
  const std::size_t n = element_count();
  std::vector<T> values(n);
  if (dtype == DType::f32) {
    std::vector<float> raw(n);
    std::memcpy(raw.data(), bytes.data(), n * sizeof(float));
    std::copy(raw.begin(), raw.end(), values.begin());
  } else if (dtype == DType::f64) {
    std::vector<double> raw(n);
    std::memcpy(raw.data(), bytes.data(), n * sizeof(double));
    std::transform(raw.begin(), raw.end(), values.begin(), [](double v) { return static_cast<T>(v); });
  } else {
    throw FormatError("npy: expected a floating point array, found '<i4'");
  }
  return Tensor<T>(shape, std::move(values));
}

LabelMap NpyArray::to_labels() const {
  if (dtype != DType::i32) throw FormatError("npy: label maps must be '<i4', found '" + std::string(dtype_descr(dtype)) + "'");
  if (shape.size() != 2) throw FormatError("npy: label maps must be rank 2, found " + shape_to_string(shape));
  std::vector<std::int32_t> values(element_count());
  std::memcpy(values.data(), bytes.data(), values.size() * sizeof(std::int32_t));
  return LabelMap(shape[0], shape[1], std::move(values));
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw FormatError("short write to " + path.string());
}

NpyArray read_npy(const std::filesystem::path& path) {
  const std::string raw = read_file(path);
  try {
    return decode_npy(std::as_bytes(std::span(raw.data(), raw.size())));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

template <typename T>
void write_tensor(const std::filesystem::path& path, const Tensor<T>& t) {
  const DType dtype = sizeof(T) == 8 ? DType::f64 : DType::f32;
  write_file(path, encode_npy(dtype, t.shape(), std::as_bytes(t.data())));
}

LabelMap read_labels(const std::filesystem::path& path) { return read_npy(path).to_labels(); }

void write_labels(const std::filesystem::path& path, const LabelMap& labels) {
  write_file(path, encode_npy(DType::i32, {labels.height, labels.width}, std::as_bytes(std::span(labels.labels))));
}

template Tensor<float> NpyArray::to_tensor<float>() const;
template Tensor<double> NpyArray::to_tensor<double>() const;
template void write_tensor<float>(const std::filesystem::path&, const Tensor<float>&);
template void write_tensor<double>(const std::filesystem::path&, const Tensor<double>&);

}  // namespace enlfcn
