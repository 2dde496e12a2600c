#pragma once

#include <cstdint>
#include <istream>
#include <ostream>

#include "tripse/tensor.hpp"

namespace tripse {

// Little-endian binary tensor record:
//   "TSR1" | rank u32 | extents u32 x rank | float32 x numel
void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);

namespace io {
void write_u16(std::ostream& out, std::uint16_t v);
void write_u32(std::ostream& out, std::uint32_t v);
void write_u64(std::ostream& out, std::uint64_t v);
void write_f32(std::ostream& out, float v);
void write_f64(std::ostream& out, double v);
std::uint16_t read_u16(std::istream& in);
std::uint32_t read_u32(std::istream& in);
std::uint64_t read_u64(std::istream& in);
float read_f32(std::istream& in);
double read_f64(std::istream& in);
void read_exact(std::istream& in, char* dst, std::size_t n);
}  // namespace io

}  // namespace tripse
