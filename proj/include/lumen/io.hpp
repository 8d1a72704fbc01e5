#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lumen/tensor.hpp"

namespace lumen {

// ---------------------------------------------------------------------------
// LTV1 container.
//
// Layout, all integers little-endian:
//   "LTV1"            4 bytes
//   dtype             u32, 1 = f32, 2 = f64
//   rank              u32, number of extents
//   extents           rank x u64
//   channels          u32
//   payload           channels * prod(extents) values, IEEE little-endian,
//                     channel-outermost, row-major within a channel

enum class Ltv1Dtype : std::uint32_t { f32 = 1, f64 = 2 };

struct Ltv1File {
  Ltv1Dtype dtype = Ltv1Dtype::f64;
  std::uint32_t channels = 1;
  std::vector<std::uint64_t> extents;
  /// Payload widened to double. f32 values widen exactly, so writing them
  /// back as f32 reproduces the original bits.
  std::vector<double> values;

  std::size_t expected_size() const;
  /// (channels, extents...).
  Tensor tensor() const;
  /// extents only; requires channels == 1.
  Tensor channel_tensor() const;
};

/// Splits x into channels (leading axis) and extents (the rest).
Ltv1File ltv1_from_tensor(const Tensor& x, Ltv1Dtype dtype = Ltv1Dtype::f64);
/// One channel whose extents are x's full shape.
Ltv1File ltv1_single_channel(const Tensor& x, Ltv1Dtype dtype = Ltv1Dtype::f64);

std::vector<std::uint8_t> encode_ltv1(const Ltv1File& file);
Ltv1File decode_ltv1(const std::vector<std::uint8_t>& bytes);

void write_ltv1(const std::filesystem::path& path, const Ltv1File& file);
Ltv1File read_ltv1(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// PNG export.

/// Writes (H, W) as 8-bit gray or (3, H, W) as RGB, mapping [lo, hi] to
/// [0, 255] with lo/hi the tensor's min and max. The range is appended to
/// `stem` ("<stem>_range_<lo>_<hi>.png"); returns the path written.
std::filesystem::path write_png_normalized(const std::filesystem::path& stem, const Tensor& image);

/// Tiles images (N, H, W) or (3, N, H, W) into a grid with `columns` tiles per
/// row (0 picks ceil(sqrt(N))) and a 1-pixel gap filled with the minimum.
Tensor contact_sheet(const Tensor& images, int columns = 0);

/// Columns of a transport tensor (C, I, J, i, j) as an (i x j) grid of I x J
/// images; hidden videos (C, t, i, j) as a grid of frames (at most max_frames,
/// evenly spaced). One or three channels.
Tensor transport_sheet(const Tensor& transport);
Tensor video_sheet(const Tensor& video, int max_frames = 256);

// ---------------------------------------------------------------------------
// Text outputs.

/// Tab-separated table with a header row; values printed with 17 significant
/// digits so files compare byte-for-byte across identical runs.
void write_tsv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows);

}  // namespace lumen
