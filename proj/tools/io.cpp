#include "pcde/cli.hpp"

#include "pcde/errors.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace pcde::cli {

namespace {

std::string_view
trim(std::string_view s)
{
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t'))
    s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

std::vector<std::string_view>
split_fields(std::string_view line)
{
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos)
      return out;
    start = comma + 1;
  }
}

bool
parse_double(std::string_view text, double& out)
{
  if (!text.empty() && text.front() == '+')
    text.remove_prefix(1);
  if (text.empty())
    return false;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), out);
  return res.ec == std::errc() && res.ptr == text.data() + text.size();
}

void
check_covariates(const Dataset& data)
{
  for (Eigen::Index i = 0; i < data.x.rows(); ++i)
    for (Eigen::Index j = 0; j < data.x.cols(); ++j)
      if (!(data.x(i, j) >= 0.0 && data.x(i, j) <= 1.0))
        throw DataError("covariate x" + std::to_string(j + 1) + " of row " + std::to_string(i + 1) +
                        " lies outside [0,1]");
}

} // namespace

std::string
format_number(double v)
{
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

Dataset
parse_dataset_csv(std::istream& in)
{
  std::string line;
  if (!std::getline(in, line))
    throw DataError("dataset is empty");
  const auto header = split_fields(line);
  int dx = 0;
  int dy = 0;
  for (const auto& h : header) {
    const char prefix = h.empty() ? '\0' : h.front();
    const int expected = prefix == 'x' ? dx + 1 : dy + 1;
    if ((prefix != 'x' && prefix != 'y') || h.substr(1) != std::to_string(expected) || (prefix == 'x' && dy > 0))
      throw DataError("dataset header must read x1,..,x{d_X},y1,..,y{d_Y}; got '" + std::string(h) + "'");
    (prefix == 'x' ? dx : dy) = expected;
  }
  if (dx == 0 || dy == 0)
    throw DataError("dataset header needs at least one x and one y column");

  std::vector<double> values;
  std::size_t rows = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty())
      continue;
    const auto fields = split_fields(line);
    if (fields.size() != header.size())
      throw DataError("line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                      " fields, got " + std::to_string(fields.size()));
    for (const auto& f : fields) {
      double v = 0.0;
      if (!parse_double(f, v) || !std::isfinite(v))
        throw DataError("line " + std::to_string(line_no) + ": '" + std::string(f) + "' is not a finite number");
      values.push_back(v);
    }
    ++rows;
  }
  if (rows == 0)
    throw DataError("dataset has no rows");

  Dataset data;
  data.x.resize(static_cast<Eigen::Index>(rows), dx);
  data.y.resize(static_cast<Eigen::Index>(rows), dy);
  const std::size_t width = header.size();
  for (std::size_t i = 0; i < rows; ++i) {
    for (int j = 0; j < dx; ++j)
      data.x(static_cast<Eigen::Index>(i), j) = values[i * width + j];
    for (int j = 0; j < dy; ++j)
      data.y(static_cast<Eigen::Index>(i), j) = values[i * width + dx + j];
  }
  check_covariates(data);
  return data;
}

Dataset
read_dataset_csv(const std::string& path)
{
  std::ifstream in(path);
  if (!in)
    throw DataError("cannot open dataset '" + path + "'");
  return parse_dataset_csv(in);
}

void
write_dataset_csv(std::ostream& out, const Dataset& data)
{
  for (int j = 0; j < data.dim_x(); ++j)
    out << (j ? ",x" : "x") << j + 1;
  for (int j = 0; j < data.dim_y(); ++j)
    out << ",y" << j + 1;
  out << '\n';
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto x = data.x_row(i);
    const auto y = data.y_row(i);
    for (std::size_t j = 0; j < x.size(); ++j)
      out << (j ? "," : "") << format_number(x[j]);
    for (double v : y)
      out << ',' << format_number(v);
    out << '\n';
  }
}

Cube
read_cube(const std::string& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw DataError("cannot open cube '" + path + "'");
  std::string header;
  if (!std::getline(in, header))
    throw DataError("cube '" + path + "' has no header");
  std::istringstream hs(header);
  std::string magic;
  long long h = 0, w = 0, b = 0;
  std::string rest;
  if (!(hs >> magic >> h >> w >> b) || magic != "CUBE1" || h <= 0 || w <= 0 || b <= 0 || (hs >> rest))
    throw DataError("cube header must read 'CUBE1 <height> <width> <bands>'");

  Cube cube;
  cube.height = static_cast<std::size_t>(h);
  cube.width = static_cast<std::size_t>(w);
  cube.bands = static_cast<std::size_t>(b);
  const std::size_t pixels = cube.height * cube.width;
  std::vector<unsigned char> raw(pixels * cube.bands * 8);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size())
    throw DataError("cube '" + path + "' is truncated");
  in.peek();
  if (!in.eof())
    throw DataError("cube '" + path + "' has trailing bytes");

  cube.data.x.resize(static_cast<Eigen::Index>(pixels), 2);
  cube.data.y.resize(static_cast<Eigen::Index>(pixels), static_cast<Eigen::Index>(cube.bands));
  for (std::size_t r = 0; r < cube.height; ++r)
    for (std::size_t c = 0; c < cube.width; ++c) {
      const auto i = static_cast<Eigen::Index>(r * cube.width + c);
      cube.data.x(i, 0) = (static_cast<double>(c) + 0.5) / static_cast<double>(cube.width);
      cube.data.x(i, 1) = (static_cast<double>(r) + 0.5) / static_cast<double>(cube.height);
      for (std::size_t k = 0; k < cube.bands; ++k) {
        std::uint64_t bits = 0;
        const unsigned char* p = raw.data() + (static_cast<std::size_t>(i) * cube.bands + k) * 8;
        for (int byte = 7; byte >= 0; --byte)
          bits = (bits << 8) | p[byte];
        const double v = std::bit_cast<double>(bits);
        if (!std::isfinite(v))
          throw DataError("cube '" + path + "' holds a non-finite value");
        cube.data.y(i, static_cast<Eigen::Index>(k)) = v;
      }
    }
  return cube;
}

void
write_cube(const std::string& path, std::size_t height, std::size_t width, std::size_t bands, std::span<const double> values)
{
  if (values.size() != height * width * bands)
    throw ContractError("write_cube: value count differs from height * width * bands");
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw DataError("cannot write cube '" + path + "'");
  out << "CUBE1 " << height << ' ' << width << ' ' << bands << '\n';
  for (double v : values) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    char bytes[8];
    for (int byte = 0; byte < 8; ++byte)
      bytes[byte] = static_cast<char>((bits >> (8 * byte)) & 0xff);
    out.write(bytes, 8);
  }
}

void
write_labels(std::ostream& out, const std::vector<int>& labels, const std::optional<Cube>& cube)
{
  if (cube) {
    out << "row,col,label\n";
    for (std::size_t i = 0; i < labels.size(); ++i)
      out << i / cube->width << ',' << i % cube->width << ',' << labels[i] << '\n';
    return;
  }
  out << "label\n";
  for (int l : labels)
    out << l << '\n';
}

} // namespace pcde::cli
