#include "tripse/serialize.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <string>

#include "tripse/errors.hpp"

namespace tripse {

namespace io {

namespace {

template <typename U>
void write_le(std::ostream& out, U v) {
  std::array<char, sizeof(U)> bytes;
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(bytes.data(), bytes.size());
}

template <typename U>
U read_le(std::istream& in) {
  std::array<char, sizeof(U)> bytes;
  read_exact(in, bytes.data(), bytes.size());
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<unsigned char>(bytes[i])) << (8 * i);
  return v;
}

}  // namespace

void read_exact(std::istream& in, char* dst, std::size_t n) {
  in.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) throw FormatError("truncated stream");
}

void write_u16(std::ostream& out, std::uint16_t v) { write_le(out, v); }
void write_u32(std::ostream& out, std::uint32_t v) { write_le(out, v); }
void write_u64(std::ostream& out, std::uint64_t v) { write_le(out, v); }
void write_f32(std::ostream& out, float v) { write_le(out, std::bit_cast<std::uint32_t>(v)); }
void write_f64(std::ostream& out, double v) { write_le(out, std::bit_cast<std::uint64_t>(v)); }
std::uint16_t read_u16(std::istream& in) { return read_le<std::uint16_t>(in); }
std::uint32_t read_u32(std::istream& in) { return read_le<std::uint32_t>(in); }
std::uint64_t read_u64(std::istream& in) { return read_le<std::uint64_t>(in); }
float read_f32(std::istream& in) { return std::bit_cast<float>(read_le<std::uint32_t>(in)); }
double read_f64(std::istream& in) { return std::bit_cast<double>(read_le<std::uint64_t>(in)); }

}  // namespace io

void write_tensor(std::ostream& out, const Tensor& t) {
  out.write("TSR1", 4);
  io::write_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape().dims()) io::write_u32(out, static_cast<std::uint32_t>(d));
  for (float v : t.data()) io::write_f32(out, v);
}

Tensor read_tensor(std::istream& in) {
  char magic[4];
  io::read_exact(in, magic, 4);
  if (std::memcmp(magic, "TSR1", 4) != 0) throw FormatError("bad tensor magic");
  const std::uint32_t rank = io::read_u32(in);
  if (rank == 0 || rank > 16) throw FormatError("bad tensor rank " + std::to_string(rank));
  std::vector<std::size_t> dims(rank);
  for (auto& d : dims) d = io::read_u32(in);
  Shape shape = [&] {
    try {
      return Shape(dims);
    } catch (const ShapeError& e) {
      throw FormatError(std::string("bad tensor extents: ") + e.what());
    }
  }();
  std::vector<float> values(shape.numel());
  for (auto& v : values) v = io::read_f32(in);
  return Tensor(std::move(shape), std::move(values));
}

}  // namespace tripse
