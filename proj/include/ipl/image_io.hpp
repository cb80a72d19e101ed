#pragma once

#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ipl/tensor.hpp"

namespace ipl {

namespace detail {

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed for " + path);
  return bytes;
}

// Write-then-rename so failure paths never leave a partial file behind.
inline void atomic_write_file(const std::string& path,
                              const std::uint8_t* data, std::size_t size) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp);
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(size));
    if (!out) {
      out.close();
      std::remove(tmp.c_str());
      throw IoError("write failed for " + tmp);
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::remove(tmp.c_str());
    throw IoError("rename to " + path + " failed: " + ec.message());
  }
}

inline std::uint8_t to_byte(float v) {
  const long r = std::lround(static_cast<double>(v) * 255.0);
  return static_cast<std::uint8_t>(std::min(255l, std::max(0l, r)));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Binary PPM (P6), maxval 255. The bit-exact interchange format.

inline std::vector<std::uint8_t> encode_ppm(const Tensor3& img) {
  if (img.c() != 3) {
    throw ShapeError("ppm wants a 3-channel image, got " + img.shape().str());
  }
  std::string header = "P6\n" + std::to_string(img.w()) + " " +
                       std::to_string(img.h()) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + static_cast<std::size_t>(img.numel()));
  for (int y = 0; y < img.h(); ++y) {
    for (int x = 0; x < img.w(); ++x) {
      for (int c = 0; c < 3; ++c) out.push_back(detail::to_byte(img.at(c, x, y)));
    }
  }
  return out;
}

inline Tensor3 decode_ppm(const std::vector<std::uint8_t>& bytes,
                          const std::string& origin = "<memory>") {
  std::size_t pos = 0;
  auto fail = [&](const std::string& why) -> std::runtime_error {
    return FormatError("bad PPM in " + origin + ": " + why);
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') {
    throw fail("missing P6 magic");
  }
  pos = 2;
  auto next_token = [&]() -> std::string {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    std::string tok;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) {
      tok.push_back(static_cast<char>(bytes[pos++]));
    }
    if (tok.empty()) throw fail("truncated header");
    return tok;
  };
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(next_token());
    h = std::stoi(next_token());
    maxval = std::stoi(next_token());
  } catch (const std::logic_error&) {
    throw fail("non-numeric header field");
  }
  if (w < 1 || h < 1) throw fail("non-positive dimensions");
  if (maxval != 255) throw fail("unsupported maxval " + std::to_string(maxval));
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) {
    throw fail("missing header terminator");
  }
  ++pos;
  const std::size_t need = static_cast<std::size_t>(w) * h * 3;
  if (bytes.size() - pos < need) throw fail("truncated pixel data");
  Tensor3 img(3, w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        img.at(c, x, y) = static_cast<float>(bytes[pos++]) / 255.f;
      }
    }
  }
  return img;
}

// ---------------------------------------------------------------------------
// PNG (8-bit RGB) through libpng, encoded in memory.

namespace detail {

struct PngSink {
  std::vector<std::uint8_t> bytes;
};

inline void png_sink_write(png_structp png, png_bytep data, png_size_t len) {
  auto* sink = static_cast<PngSink*>(png_get_io_ptr(png));
  sink->bytes.insert(sink->bytes.end(), data, data + len);
}

struct PngSource {
  const std::uint8_t* data;
  std::size_t size;
  std::size_t pos;
};

inline void png_source_read(png_structp png, png_bytep out, png_size_t len) {
  auto* src = static_cast<PngSource*>(png_get_io_ptr(png));
  if (src->pos + len > src->size) {
    png_error(png, "unexpected end of PNG stream");
  }
  std::copy(src->data + src->pos, src->data + src->pos + len, out);
  src->pos += len;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_png(const Tensor3& img) {
  if (img.c() != 3) {
    throw ShapeError("png wants a 3-channel image, got " + img.shape().str());
  }
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                            nullptr, nullptr);
  if (png == nullptr) throw IoError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  detail::PngSink sink;
  std::vector<std::uint8_t> raster(static_cast<std::size_t>(img.numel()));
  std::vector<png_bytep> rows(static_cast<std::size_t>(img.h()));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw FormatError("libpng write error");
  }
  png_set_write_fn(png, &sink, detail::png_sink_write, nullptr);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.w()),
               static_cast<png_uint_32>(img.h()), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  for (int y = 0; y < img.h(); ++y) {
    for (int x = 0; x < img.w(); ++x) {
      for (int c = 0; c < 3; ++c) {
        raster[(static_cast<std::size_t>(y) * img.w() + x) * 3 + c] =
            detail::to_byte(img.at(c, x, y));
      }
    }
    rows[y] = raster.data() + static_cast<std::size_t>(y) * img.w() * 3;
  }
  png_set_rows(png, info, rows.data());
  png_write_png(png, info, PNG_TRANSFORM_IDENTITY, nullptr);
  png_destroy_write_struct(&png, &info);
  return sink.bytes;
}

inline Tensor3 decode_png(const std::vector<std::uint8_t>& bytes,
                          const std::string& origin = "<memory>") {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
    throw FormatError("bad PNG in " + origin + ": missing signature");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                           nullptr, nullptr);
  if (png == nullptr) throw IoError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  std::vector<png_bytep> rows;
  std::vector<std::uint8_t> raster;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("bad PNG in " + origin + ": libpng read error");
  }
  detail::PngSource src{bytes.data(), bytes.size(), 0};
  png_set_read_fn(png, &src, detail::png_source_read);
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  if (png_get_rowbytes(png, info) != static_cast<std::size_t>(w) * 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("bad PNG in " + origin + ": not convertible to RGB8");
  }
  raster.resize(static_cast<std::size_t>(w) * h * 3);
  rows.resize(static_cast<std::size_t>(h));
  for (int y = 0; y < h; ++y) {
    rows[y] = raster.data() + static_cast<std::size_t>(y) * w * 3;
  }
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  Tensor3 img(3, w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        img.at(c, x, y) =
            static_cast<float>(raster[(static_cast<std::size_t>(y) * w + x) * 3 + c]) /
            255.f;
      }
    }
  }
  return img;
}

// ---------------------------------------------------------------------------

inline bool has_suffix(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

inline Tensor3 load_image(const std::string& path) {
  const std::vector<std::uint8_t> bytes = detail::read_file(path);
  if (bytes.empty()) throw FormatError("empty image file " + path);
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') {
    return decode_ppm(bytes, path);
  }
  if (bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0) {
    return decode_png(bytes, path);
  }
  throw FormatError("unsupported image format in " + path +
                    " (expected P6 PPM or PNG)");
}

inline void save_image(const std::string& path, const Tensor3& img) {
  const std::vector<std::uint8_t> bytes =
      has_suffix(path, ".png") ? encode_png(img) : encode_ppm(img);
  detail::atomic_write_file(path, bytes.data(), bytes.size());
}

}  // namespace ipl
