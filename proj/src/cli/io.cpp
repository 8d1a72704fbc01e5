#include "lumen/io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <memory>
#include <sstream>

#include "lumen/errors.hpp"

namespace lumen {

namespace {

constexpr char kMagic[4] = {'L', 'T', 'V', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int k = 0; k < 8; ++k) out.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  std::uint64_t take(int width) {
    if (pos_ + static_cast<std::size_t>(width) > bytes_.size()) throw IoError("ltv1: truncated file");
    std::uint64_t v = 0;
    for (int k = 0; k < width; ++k) v |= static_cast<std::uint64_t>(bytes_[pos_ + k]) << (8 * k);
    pos_ += static_cast<std::size_t>(width);
    return v;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

std::size_t dtype_size(Ltv1Dtype d) {
  switch (d) {
    case Ltv1Dtype::f32:
      return 4;
    case Ltv1Dtype::f64:
      return 8;
  }
  throw IoError("ltv1: unknown dtype code");
}

std::string format_bound(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

// Kept apart so no local of the caller lives across setjmp.
void encode_png(const std::filesystem::path& path, const std::vector<png_byte>& pixels, std::size_t width,
                std::size_t height, std::size_t colors) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw IoError("cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("png: out of memory");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("png: encoding failed for " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               colors == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t r = 0; r < height; ++r) {
    png_write_row(png, const_cast<png_bytep>(pixels.data() + r * width * colors));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

std::size_t Ltv1File::expected_size() const {
  std::size_t n = channels;
  for (std::uint64_t e : extents) n *= static_cast<std::size_t>(e);
  return n;
}

Tensor Ltv1File::tensor() const {
  Shape shape{channels};
  for (std::uint64_t e : extents) shape.push_back(static_cast<std::size_t>(e));
  return Tensor(std::move(shape), values);
}

Tensor Ltv1File::channel_tensor() const {
  if (channels != 1) throw ShapeError("ltv1: expected a single channel, got " + std::to_string(channels));
  Shape shape;
  for (std::uint64_t e : extents) shape.push_back(static_cast<std::size_t>(e));
  if (shape.empty()) shape.push_back(1);
  return Tensor(std::move(shape), values);
}

Ltv1File ltv1_from_tensor(const Tensor& x, Ltv1Dtype dtype) {
  if (x.rank() < 1) throw ShapeError("ltv1: tensor has no axes");
  Ltv1File f;
  f.dtype = dtype;
  f.channels = static_cast<std::uint32_t>(x.dim(0));
  for (std::size_t a = 1; a < x.rank(); ++a) f.extents.push_back(x.dim(a));
  f.values = x.storage();
  return f;
}

Ltv1File ltv1_single_channel(const Tensor& x, Ltv1Dtype dtype) {
  Ltv1File f;
  f.dtype = dtype;
  f.channels = 1;
  for (std::size_t e : x.shape()) f.extents.push_back(e);
  f.values = x.storage();
  return f;
}

std::vector<std::uint8_t> encode_ltv1(const Ltv1File& file) {
  if (file.values.size() != file.expected_size()) {
    throw ShapeError("ltv1: payload has " + std::to_string(file.values.size()) + " values, header implies " +
                     std::to_string(file.expected_size()));
  }
  const std::size_t width = dtype_size(file.dtype);
  std::vector<std::uint8_t> out;
  out.reserve(4 + 8 + 8 * file.extents.size() + 4 + width * file.values.size());
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put_u32(out, static_cast<std::uint32_t>(file.dtype));
  put_u32(out, static_cast<std::uint32_t>(file.extents.size()));
  for (std::uint64_t e : file.extents) put_u64(out, e);
  put_u32(out, file.channels);
  for (double v : file.values) {
    if (file.dtype == Ltv1Dtype::f32) {
      put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    } else {
      put_u64(out, std::bit_cast<std::uint64_t>(v));
    }
  }
  return out;
}

Ltv1File decode_ltv1(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw IoError("ltv1: bad magic");
  const std::vector<std::uint8_t> body(bytes.begin() + 4, bytes.end());
  Reader r(body);
  Ltv1File f;
  const auto code = static_cast<std::uint32_t>(r.take(4));
  if (code != 1 && code != 2) throw IoError("ltv1: unknown dtype code " + std::to_string(code));
  f.dtype = static_cast<Ltv1Dtype>(code);
  const auto rank = static_cast<std::uint32_t>(r.take(4));
  if (rank > 16) throw IoError("ltv1: rank " + std::to_string(rank) + " is implausible");
  for (std::uint32_t a = 0; a < rank; ++a) f.extents.push_back(r.take(8));
  f.channels = static_cast<std::uint32_t>(r.take(4));
  const std::size_t width = dtype_size(f.dtype);
  const std::size_t n = f.expected_size();
  if (r.remaining() != n * width) {
    throw IoError("ltv1: payload is " + std::to_string(r.remaining()) + " bytes, header implies " +
                  std::to_string(n * width));
  }
  f.values.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    f.values[k] = f.dtype == Ltv1Dtype::f32 ? static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(r.take(4))))
                                            : std::bit_cast<double>(r.take(8));
  }
  return f;
}

void write_ltv1(const std::filesystem::path& path, const Ltv1File& file) {
  const std::vector<std::uint8_t> bytes = encode_ltv1(file);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

Ltv1File read_ltv1(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_ltv1(bytes);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

std::filesystem::path write_png_normalized(const std::filesystem::path& stem, const Tensor& image) {
  std::size_t colors = 1, height = 0, width = 0;
  if (image.rank() == 2) {
    height = image.dim(0);
    width = image.dim(1);
  } else if (image.rank() == 3 && image.dim(0) == 3) {
    colors = 3;
    height = image.dim(1);
    width = image.dim(2);
  } else {
    throw ShapeError("png: expected (H, W) or (3, H, W), got " + shape_string(image.shape()));
  }
  if (height == 0 || width == 0) throw ShapeError("png: empty image");
  const auto [lo_it, hi_it] = std::minmax_element(image.storage().begin(), image.storage().end());
  const double lo = *lo_it, hi = *hi_it;
  const double span = hi > lo ? hi - lo : 1.0;

  std::filesystem::path path = stem;
  path += "_range_" + format_bound(lo) + "_" + format_bound(hi) + ".png";

  std::vector<png_byte> pixels(height * width * colors);
  const std::size_t plane = height * width;
  for (std::size_t p = 0; p < plane; ++p)
    for (std::size_t c = 0; c < colors; ++c) {
      const double v = std::clamp((image[c * plane + p] - lo) / span, 0.0, 1.0);
      pixels[p * colors + c] = static_cast<png_byte>(std::lround(v * 255.0));
    }

  encode_png(path, pixels, width, height, colors);
  return path;
}

Tensor contact_sheet(const Tensor& images, int columns) {
  std::size_t colors = 1, n = 0, h = 0, w = 0;
  if (images.rank() == 3) {
    n = images.dim(0);
    h = images.dim(1);
    w = images.dim(2);
  } else if (images.rank() == 4 && images.dim(0) == 3) {
    colors = 3;
    n = images.dim(1);
    h = images.dim(2);
    w = images.dim(3);
  } else {
    throw ShapeError("contact sheet: expected (N, H, W) or (3, N, H, W), got " + shape_string(images.shape()));
  }
  if (n == 0) throw ShapeError("contact sheet: no images");
  const std::size_t cols =
      columns > 0 ? static_cast<std::size_t>(columns) : static_cast<std::size_t>(std::ceil(std::sqrt(double(n))));
  const std::size_t rows = (n + cols - 1) / cols;
  const std::size_t sh = rows * (h + 1) - 1, sw = cols * (w + 1) - 1;
  const double gap = *std::min_element(images.storage().begin(), images.storage().end());
  Tensor sheet(colors == 3 ? Shape{3, sh, sw} : Shape{sh, sw}, gap);
  for (std::size_t c = 0; c < colors; ++c)
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t r0 = (k / cols) * (h + 1), c0 = (k % cols) * (w + 1);
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          sheet[(c * sh + r0 + y) * sw + c0 + x] = images[((c * n + k) * h + y) * w + x];
        }
    }
  return sheet;
}

Tensor transport_sheet(const Tensor& transport) {
  if (transport.rank() != 5 || (transport.dim(0) != 1 && transport.dim(0) != 3)) {
    throw ShapeError("transport sheet: expected (C, I, J, i, j) with 1 or 3 channels");
  }
  const std::size_t nc = transport.dim(0), oh = transport.dim(1), ow = transport.dim(2), hh = transport.dim(3),
                    hw = transport.dim(4);
  const std::size_t n = hh * hw;
  Tensor images(nc == 3 ? Shape{3, n, oh, ow} : Shape{n, oh, ow});
  for (std::size_t c = 0; c < nc; ++c)
    for (std::size_t p = 0; p < oh * ow; ++p)
      for (std::size_t q = 0; q < n; ++q) images[(c * n + q) * oh * ow + p] = transport[(c * oh * ow + p) * n + q];
  return contact_sheet(images, static_cast<int>(hw));
}

Tensor video_sheet(const Tensor& video, int max_frames) {
  if (video.rank() != 4 || (video.dim(0) != 1 && video.dim(0) != 3)) {
    throw ShapeError("video sheet: expected (C, t, H, W) with 1 or 3 channels");
  }
  if (max_frames < 1) throw ConfigError("video sheet: max_frames must be >= 1");
  const std::size_t nc = video.dim(0), nt = video.dim(1), plane = video.dim(2) * video.dim(3);
  const std::size_t n = std::min<std::size_t>(nt, static_cast<std::size_t>(max_frames));
  Tensor images(nc == 3 ? Shape{3, n, video.dim(2), video.dim(3)} : Shape{n, video.dim(2), video.dim(3)});
  for (std::size_t c = 0; c < nc; ++c)
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t f = n == 1 ? 0 : k * (nt - 1) / (n - 1);
      std::copy_n(video.ptr() + (c * nt + f) * plane, plane, images.ptr() + (c * n + k) * plane);
    }
  return contact_sheet(images);
}

void write_tsv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (std::size_t k = 0; k < header.size(); ++k) out << (k ? "\t" : "") << header[k];
  out << '\n';
  char buf[40];
  for (const auto& row : rows) {
    for (std::size_t k = 0; k < row.size(); ++k) {
      std::snprintf(buf, sizeof buf, "%.17g", row[k]);
      out << (k ? "\t" : "") << buf;
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace lumen
