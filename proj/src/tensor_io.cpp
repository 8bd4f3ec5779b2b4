#include <bit>
#include <cstring>
#include <fstream>

#include "dh/tensor.hpp"

static_assert(std::endian::native == std::endian::little,
              "tensor dumps are little-endian");

namespace dh {

namespace {

constexpr char kMagic[4] = {'D', 'H', 'T', 'N'};

template <typename T>
void write_raw(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw FormatError("tensor dump truncated");
  return v;
}

}  // namespace

void save_tensor(std::ostream& out, const Tensor& t) {
  out.write(kMagic, 4);
  write_raw<uint32_t>(out, static_cast<uint32_t>(t.rank()));
  for (int i = 0; i < t.rank(); ++i)
    write_raw<uint64_t>(out, static_cast<uint64_t>(t.dim(i)));
  out.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!out) throw FormatError("tensor dump write failed");
}

void save_tensor(const std::string& path, const Tensor& t) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open for writing: " + path);
  save_tensor(f, t);
}

Tensor load_tensor(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw FormatError("bad tensor dump magic");
  const uint32_t rank = read_raw<uint32_t>(in);
  if (rank > 8) throw FormatError("implausible tensor rank");
  Shape shape(rank);
  for (uint32_t i = 0; i < rank; ++i)
    shape[i] = static_cast<int64_t>(read_raw<uint64_t>(in));
  const int64_t n = shape_numel(shape);
  if (n < 0 || n > (1LL << 32)) throw FormatError("implausible tensor size");
  std::vector<double> data(static_cast<size_t>(n));
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (!in) throw FormatError("tensor dump truncated");
  return Tensor::from(shape, std::move(data));
}

Tensor load_tensor(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open: " + path);
  return load_tensor(f);
}

}  // namespace dh
