#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>

#include "tripse/data.hpp"
#include "tripse/errors.hpp"

namespace tripse {

namespace {

constexpr std::size_t kFerPixels = kFerSide * kFerSide;

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

[[noreturn]] void fail(std::size_t line, const std::string& what) {
  throw DataError("FER2013 CSV line " + std::to_string(line) + ": " + what);
}

std::vector<float> parse_pixels(std::string_view field, std::size_t line) {
  std::vector<float> px;
  px.reserve(kFerPixels);
  const char* p = field.data();
  const char* end = p + field.size();
  while (true) {
    while (p < end && *p == ' ') ++p;
    if (p == end) break;
    int v = 0;
    auto [next, ec] = std::from_chars(p, end, v);
    if (ec != std::errc() || (next < end && *next != ' ')) {
      const char* tok_end = std::find(p, end, ' ');
      fail(line, "pixel '" + std::string(p, tok_end) + "' is not an integer");
    }
    if (v < 0 || v > 255) fail(line, "pixel value " + std::to_string(v) + " outside 0..255");
    if (px.size() == kFerPixels) fail(line, "more than " + std::to_string(kFerPixels) + " pixels");
    px.push_back(static_cast<float>(v) / 255.0f);
    p = next;
  }
  if (px.size() != kFerPixels) {
    fail(line, "expected " + std::to_string(kFerPixels) + " pixels, found " + std::to_string(px.size()));
  }
  return px;
}

}  // namespace

std::string to_string(Split split) {
  switch (split) {
    case Split::training: return "Training";
    case Split::public_test: return "PublicTest";
    case Split::private_test: return "PrivateTest";
  }
  return "Training";
}

Split parse_split(std::string_view name) {
  std::string lower(trim(name));
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "training") return Split::training;
  if (lower == "publictest") return Split::public_test;
  if (lower == "privatetest") return Split::private_test;
  throw DataError("unknown split '" + std::string(name) + "' (expected Training, PublicTest or PrivateTest)");
}

std::vector<FerRecord> load_fer_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("FER2013 CSV is empty");
  if (trim(line) != "emotion,pixels,Usage") {
    throw DataError("FER2013 CSV line 1: expected header 'emotion,pixels,Usage', got '" + std::string(trim(line)) +
                    "'");
  }
  std::vector<FerRecord> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view row = trim(line);
    if (row.empty()) continue;
    const auto first = row.find(',');
    const auto last = row.rfind(',');
    if (first == std::string_view::npos || first == last) fail(line_no, "expected three comma-separated fields");

    const std::string_view label_field = trim(row.substr(0, first));
    int label = -1;
    auto [ptr, ec] = std::from_chars(label_field.data(), label_field.data() + label_field.size(), label);
    if (ec != std::errc() || ptr != label_field.data() + label_field.size()) {
      fail(line_no, "emotion '" + std::string(label_field) + "' is not an integer");
    }
    if (label < 0 || label >= static_cast<int>(kFerClasses)) {
      fail(line_no, "emotion " + std::to_string(label) + " outside 0..6");
    }

    Split split;
    try {
      split = parse_split(row.substr(last + 1));
    } catch (const DataError& e) {
      fail(line_no, e.what());
    }

    auto px = parse_pixels(row.substr(first + 1, last - first - 1), line_no);
    out.push_back({Sample{Tensor(Shape{1, kFerSide, kFerSide}, std::move(px)), static_cast<std::size_t>(label)}, split});
  }
  return out;
}

std::vector<FerRecord> load_fer_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open FER2013 CSV '" + path + "'");
  return load_fer_csv(in);
}

std::string fer_pixel_field(const Tensor& image) {
  std::string out;
  out.reserve(image.numel() * 4);
  bool first = true;
  for (float v : image.data()) {
    if (!first) out.push_back(' ');
    first = false;
    const long q = std::lround(static_cast<double>(v) * 255.0);
    out += std::to_string(std::clamp(q, 0L, 255L));
  }
  return out;
}

SplitCounts count_splits(const std::vector<FerRecord>& records) {
  SplitCounts c;
  for (const auto& r : records) {
    switch (r.split) {
      case Split::training: ++c.training; break;
      case Split::public_test: ++c.public_test; break;
      case Split::private_test: ++c.private_test; break;
    }
  }
  return c;
}

std::vector<Sample> select_split(const std::vector<FerRecord>& records, Split split) {
  std::vector<Sample> out;
  for (const auto& r : records) {
    if (r.split == split) out.push_back(r.sample);
  }
  return out;
}

}  // namespace tripse
