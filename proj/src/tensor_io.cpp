#include "cbe/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <fmt/format.h>

#include "cbe/error.hpp"

namespace cbe {

namespace {

static_assert(sizeof(float) == 4);

void put_f32(std::ostream& out, double v) {
  const float f = static_cast<float>(v);
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
  char buf[4];
  std::memcpy(buf, &bits, 4);
  out.write(buf, 4);
}

double get_f32(const char* p) {
  std::uint32_t bits;
  std::memcpy(&bits, p, 4);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

}  // namespace

nlohmann::json write_tensors(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + path.string());
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& t : tensors) {
    const Matrix& m = *t.value;
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) put_f32(out, m(i, j));
    manifest.push_back({{"name", t.name}, {"rows", m.rows()}, {"cols", m.cols()}});
  }
  return manifest;
}

std::vector<Matrix> read_tensors(const std::filesystem::path& path, const nlohmann::json& manifest) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t expected = 0;
  for (const auto& t : manifest) expected += t.at("rows").get<std::size_t>() * t.at("cols").get<std::size_t>() * 4;
  if (expected != bytes.size())
    throw ParseError(fmt::format("{}: expected {} bytes from manifest, found {}", path.string(), expected, bytes.size()));
  std::vector<Matrix> out;
  const char* p = bytes.data();
  for (const auto& t : manifest) {
    Matrix m(t.at("rows").get<Eigen::Index>(), t.at("cols").get<Eigen::Index>());
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j, p += 4) m(i, j) = get_f32(p);
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace cbe
