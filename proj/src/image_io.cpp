#include "x2face/image_io.hpp"

#include <png.h>

#include <cmath>
#include <fstream>
#include <iterator>

namespace x2face {

Tensor<float> decode_png(std::span<const std::uint8_t> bytes, int channels) {
  require(channels == 3 || channels == 4, ErrorCode::kPrecondition,
          "decode_png: channels must be 3 or 4");
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
    fail(ErrorCode::kIo, std::string("undecodable PNG: ") + image.message);
  image.format = PNG_FORMAT_RGBA;
  std::vector<png_byte> pixels(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, pixels.data(), 0, nullptr)) {
    const std::string message = image.message;
    png_image_free(&image);
    fail(ErrorCode::kIo, "undecodable PNG: " + message);
  }
  const int w = static_cast<int>(image.width), h = static_cast<int>(image.height);
  Tensor<float> out(1, channels, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c)
        out(0, c, y, x) =
            static_cast<float>(pixels[(static_cast<std::size_t>(y) * w + x) * 4 + c]) / 255.0f;
  return out;
}

Tensor<float> read_png(const std::filesystem::path& path, int channels) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return decode_png(bytes, channels);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_png(const Tensor<float>& image) {
  const int c = image.channels();
  require(c == 3 || c == 4, ErrorCode::kShapeMismatch,
          "encode_png: expected 3 or 4 channels, got " + image.shape().str());
  const int w = image.width(), h = image.height();
  std::vector<png_byte> pixels(static_cast<std::size_t>(w) * h * c);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int k = 0; k < c; ++k) {
        const float v = std::clamp(image(0, k, y, x), 0.0f, 1.0f);
        pixels[(static_cast<std::size_t>(y) * w + x) * c + k] =
            static_cast<png_byte>(std::lround(v * 255.0f));
      }

  png_image desc{};
  desc.version = PNG_IMAGE_VERSION;
  desc.width = static_cast<png_uint_32>(w);
  desc.height = static_cast<png_uint_32>(h);
  desc.format = c == 4 ? PNG_FORMAT_RGBA : PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&desc, nullptr, &size, 0, pixels.data(), 0, nullptr))
    fail(ErrorCode::kIo, std::string("PNG encode failed: ") + desc.message);
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&desc, out.data(), &size, 0, pixels.data(), 0, nullptr))
    fail(ErrorCode::kIo, std::string("PNG encode failed: ") + desc.message);
  out.resize(size);
  return out;
}

void write_png(const std::filesystem::path& path, const Tensor<float>& image) {
  const auto bytes = encode_png(image);
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorCode::kIo, "short write to " + path.string());
}

}  // namespace x2face
