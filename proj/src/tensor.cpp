#include "eqnet/tensor.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace eqnet {

int64_t shape_numel(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t s : shape) {
    if (s <= 0) throw std::invalid_argument("tensor: non-positive dim " + std::to_string(s));
    n *= s;
  }
  return n;
}

Tensor::Tensor(std::vector<int64_t> shape_, double fill)
    : shape(std::move(shape_)), data(static_cast<size_t>(shape_numel(shape)), fill) {}

Tensor::Tensor(std::vector<int64_t> shape_, std::vector<double> data_)
    : shape(std::move(shape_)), data(std::move(data_)) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size()))
    throw std::invalid_argument("tensor: shape " + shape_str() + " does not match data length " +
                                std::to_string(data.size()));
}

std::vector<int64_t> Tensor::strides() const {
  std::vector<int64_t> st(shape.size(), 1);
  for (int64_t i = rank() - 2; i >= 0; --i) st[i] = st[i + 1] * shape[i + 1];
  return st;
}

bool Tensor::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) return false;
  return std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape)
    throw std::invalid_argument("max_abs_diff: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  double m = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::fabs(a.data[i] - b.data[i]));
  return m;
}

namespace {

constexpr char kMagic[5] = {'E', 'T', 'E', 'N', '1'};

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("ETEN1: truncated header");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

void write_eten1(std::ostream& os, const Tensor& t) {
  os.write(kMagic, 5);
  put_u32(os, static_cast<uint32_t>(t.rank()));
  for (int64_t d : t.shape) put_u32(os, static_cast<uint32_t>(d));
  // f64 little-endian payload; this targets little-endian hosts.
  os.write(reinterpret_cast<const char*>(t.data.data()),
           static_cast<std::streamsize>(t.data.size() * sizeof(double)));
}

Tensor read_eten1(std::istream& is) {
  char magic[5];
  is.read(magic, 5);
  if (!is || std::memcmp(magic, kMagic, 5) != 0) throw std::runtime_error("ETEN1: bad magic");
  uint32_t ndim = get_u32(is);
  if (ndim > 8) throw std::runtime_error("ETEN1: implausible ndim " + std::to_string(ndim));
  std::vector<int64_t> shape(ndim);
  for (uint32_t i = 0; i < ndim; ++i) shape[i] = static_cast<int64_t>(get_u32(is));
  Tensor t(shape);
  is.read(reinterpret_cast<char*>(t.data.data()),
          static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  if (!is) throw std::runtime_error("ETEN1: truncated payload");
  return t;
}

void save_tensor(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for write: " + path);
  write_eten1(os, t);
  if (!os) throw std::runtime_error("write failed: " + path);
}

Tensor load_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open for read: " + path);
  return read_eten1(is);
}

}  // namespace eqnet
