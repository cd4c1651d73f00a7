#include "fkb/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <png.h>

#include "internal/text.hpp"

namespace fkb {

namespace fs = std::filesystem;

std::uint8_t quantize(float normalized) {
  const double scaled = std::floor(static_cast<double>(normalized) * 255.0 + 0.5);
  return static_cast<std::uint8_t>(std::clamp(scaled, 0.0, 255.0));
}

ImageF32 to_float(const ImageU8& img) {
  ImageF32 out(img.width(), img.height());
  auto src = img.pixels();
  auto dst = out.pixels();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<float>(src[i]) / 255.0f;
  return out;
}

ImageU8 to_u8(const ImageF32& img) {
  ImageU8 out(img.width(), img.height());
  auto src = img.pixels();
  auto dst = out.pixels();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = quantize(src[i]);
  return out;
}

namespace {

std::string lower_extension(const std::string& path) {
  std::string ext = fs::path(path).extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string pgm_token(std::istream& in, const std::string& path) {
  std::string token;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!token.empty()) return token;
      continue;
    }
    token.push_back(static_cast<char>(c));
  }
  if (token.empty()) fail(ErrorCode::kFormat, path + ": truncated PGM header");
  return token;
}

int pgm_int(std::istream& in, const std::string& path) {
  const std::string token = pgm_token(in, path);
  int value = 0;
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc() || ptr != token.data() + token.size() || value <= 0) {
    fail(ErrorCode::kFormat, path + ": bad PGM header field '" + token + "'");
  }
  return value;
}

std::uint8_t luma(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  const double y = 0.299 * r + 0.587 * g + 0.114 * b;
  return static_cast<std::uint8_t>(std::clamp(std::floor(y + 0.5), 0.0, 255.0));
}

}  // namespace

ImageU8 load_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path);
  if (pgm_token(in, path) != "P5") fail(ErrorCode::kFormat, path + ": not a binary PGM (P5)");
  const int width = pgm_int(in, path);
  const int height = pgm_int(in, path);
  const int maxval = pgm_int(in, path);
  if (maxval > 65535) fail(ErrorCode::kFormat, path + ": PGM maxval out of range");
  // pgm_token consumed exactly one whitespace byte after maxval.

  const std::size_t count = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  const std::size_t bytes_per = maxval > 255 ? 2 : 1;
  std::vector<std::uint8_t> raw(count * bytes_per);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) fail(ErrorCode::kFormat, path + ": truncated PGM payload");

  std::vector<std::uint8_t> data(count);
  for (std::size_t i = 0; i < count; ++i) {
    const unsigned v = bytes_per == 2 ? (static_cast<unsigned>(raw[2 * i]) << 8 | raw[2 * i + 1]) : raw[i];
    if (v > static_cast<unsigned>(maxval)) fail(ErrorCode::kFormat, path + ": PGM sample exceeds maxval");
    data[i] = maxval == 255 ? static_cast<std::uint8_t>(v)
                            : static_cast<std::uint8_t>(std::floor(255.0 * v / maxval + 0.5));
  }
  return ImageU8(width, height, std::move(data));
}

void save_pgm(const std::string& path, const ImageU8& img) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path);
  out << "P5\n" << img.width() << " " << img.height() << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels().data()), static_cast<std::streamsize>(img.size()));
  if (!out) fail(ErrorCode::kIo, "write failed: " + path);
}

ImageU8 load_png(const std::string& path) {
  if (!fs::exists(path)) fail(ErrorCode::kIo, "cannot open " + path);
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    fail(ErrorCode::kFormat, path + ": " + image.message);
  }
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    const std::string message = image.message;
    png_image_free(&image);
    fail(ErrorCode::kFormat, path + ": " + message);
  }
  const int width = static_cast<int>(image.width);
  const int height = static_cast<int>(image.height);
  if (!color) return ImageU8(width, height, std::move(buffer));

  ImageU8 out(width, height);
  auto dst = out.pixels();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = luma(buffer[3 * i], buffer[3 * i + 1], buffer[3 * i + 2]);
  return out;
}

void save_png(const std::string& path, const ImageU8& img) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width());
  image.height = static_cast<png_uint_32>(img.height());
  image.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.c_str(), 0, img.pixels().data(), 0, nullptr)) {
    fail(ErrorCode::kIo, path + ": " + image.message);
  }
}

ImageU8 load_image(const std::string& path) {
  const std::string ext = lower_extension(path);
  if (ext == ".pgm") return load_pgm(path);
  if (ext == ".png") return load_png(path);
  fail(ErrorCode::kFormat, path + ": unsupported image extension '" + ext + "'");
}

void save_image(const std::string& path, const ImageU8& img) {
  const std::string ext = lower_extension(path);
  if (ext == ".pgm") return save_pgm(path, img);
  if (ext == ".png") return save_png(path, img);
  fail(ErrorCode::kFormat, path + ": unsupported image extension '" + ext + "'");
}

float bilinear_sample(const ImageF32& img, double x, double y) {
  const int w = img.width();
  const int h = img.height();
  int x0 = static_cast<int>(std::floor(x));
  int y0 = static_cast<int>(std::floor(y));
  x0 = std::clamp(x0, 0, w - 1);
  y0 = std::clamp(y0, 0, h - 1);
  const int x1 = std::min(x0 + 1, w - 1);
  const int y1 = std::min(y0 + 1, h - 1);
  const double fx = std::clamp(x - x0, 0.0, 1.0);
  const double fy = std::clamp(y - y0, 0.0, 1.0);
  const double top = img(x0, y0) * (1.0 - fx) + img(x1, y0) * fx;
  const double bottom = img(x0, y1) * (1.0 - fx) + img(x1, y1) * fx;
  return static_cast<float>(top * (1.0 - fy) + bottom * fy);
}

ImageF32 resize_bilinear(const ImageF32& img, int width, int height) {
  if (width < 1 || height < 1) fail(ErrorCode::kRange, "resize target must be at least 1x1");
  if (img.empty()) fail(ErrorCode::kDimensionMismatch, "cannot resize an empty image");
  const auto coord = [](int dst, int dst_len, int src_len) {
    if (dst_len == 1) return 0.5 * (src_len - 1);
    return dst * (static_cast<double>(src_len - 1) / static_cast<double>(dst_len - 1));
  };
  ImageF32 out(width, height);
  for (int y = 0; y < height; ++y) {
    const double sy = coord(y, height, img.height());
    for (int x = 0; x < width; ++x) out(x, y) = bilinear_sample(img, coord(x, width, img.width()), sy);
  }
  return out;
}

ImageU8 resize_bilinear(const ImageU8& img, int width, int height) {
  return to_u8(resize_bilinear(to_float(img), width, height));
}

ImageF32 gamma_correct(const ImageF32& img, double gamma) {
  if (!(gamma > 0.0) || !std::isfinite(gamma)) fail(ErrorCode::kRange, "gamma must be positive");
  ImageF32 out(img.width(), img.height());
  auto src = img.pixels();
  auto dst = out.pixels();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const double v = std::clamp(static_cast<double>(src[i]), 0.0, 1.0);
    dst[i] = static_cast<float>(std::pow(v, gamma));
  }
  return out;
}

ImageU8 gamma_correct(const ImageU8& img, double gamma) {
  if (!(gamma > 0.0) || !std::isfinite(gamma)) fail(ErrorCode::kRange, "gamma must be positive");
  // 256-entry table; the input domain is discrete.
  std::uint8_t table[256];
  for (int v = 0; v < 256; ++v) {
    table[v] = static_cast<std::uint8_t>(std::clamp(std::floor(255.0 * std::pow(v / 255.0, gamma) + 0.5), 0.0, 255.0));
  }
  ImageU8 out(img.width(), img.height());
  auto src = img.pixels();
  auto dst = out.pixels();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = table[src[i]];
  return out;
}

std::vector<std::string> ingest_sequence(const std::string& dir, int stride, int limit) {
  if (stride < 1) fail(ErrorCode::kRange, "stride must be >= 1");
  if (limit < 0) fail(ErrorCode::kRange, "limit must be >= 0");
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) fail(ErrorCode::kIo, "not a directory: " + dir);

  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(dir, ec)) {
    if (!entry.is_regular_file()) continue;
    const std::string ext = lower_extension(entry.path().string());
    if (ext == ".pgm" || ext == ".png") files.push_back(entry.path().string());
  }
  if (ec) fail(ErrorCode::kIo, "cannot list " + dir + ": " + ec.message());
  if (files.empty()) fail(ErrorCode::kEmptyDataset, "no images found in " + dir);
  std::sort(files.begin(), files.end());

  std::vector<std::string> picked;
  for (std::size_t i = 0; i < files.size(); i += static_cast<std::size_t>(stride)) {
    if (limit > 0 && picked.size() == static_cast<std::size_t>(limit)) break;
    picked.push_back(files[i]);
  }
  return picked;
}

std::vector<std::string> read_path_list(const std::string& path) {
  std::vector<std::string> out;
  for (auto& line : internal::read_lines(path)) {
    const auto trimmed = internal::trim(line);
    if (!trimmed.empty()) out.emplace_back(trimmed);
  }
  return out;
}

void write_path_list(const std::string& path, std::span<const std::string> paths) {
  std::string text;
  for (const auto& p : paths) text += p + "\n";
  internal::write_text_file(path, text);
}

}  // namespace fkb
