#include "lumen/video.hpp"

#include <string>

#include "lumen/errors.hpp"

namespace lumen {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

int as_int(std::size_t v) { return static_cast<int>(v); }

}  // namespace

VideoDims video_dims(const Tensor& video) {
  if (video.rank() != 4) throw ShapeError("expected a (C, t, H, W) video, got " + shape_string(video.shape()));
  return {as_int(video.dim(0)), as_int(video.dim(1)), as_int(video.dim(2)), as_int(video.dim(3))};
}

TransportDims transport_dims(const Tensor& transport) {
  if (transport.rank() != 5) {
    throw ShapeError("expected a (C, I, J, i, j) transport tensor, got " + shape_string(transport.shape()));
  }
  return {as_int(transport.dim(0)), as_int(transport.dim(1)), as_int(transport.dim(2)), as_int(transport.dim(3)),
          as_int(transport.dim(4))};
}

Matrix video_channel(const Tensor& video, int c) {
  const VideoDims d = video_dims(video);
  if (c < 0 || c >= d.channels) throw ShapeError("channel " + std::to_string(c) + " out of range");
  const std::size_t pixels = static_cast<std::size_t>(d.height) * d.width;
  // Channel block is (t, H*W) row-major, i.e. the transpose of the frame matrix.
  Eigen::Map<const RowMajor> block(video.ptr() + c * pixels * d.frames, d.frames, pixels);
  return block.transpose();
}

Tensor video_from_channels(const std::vector<Matrix>& channels, int height, int width) {
  if (channels.empty()) throw ShapeError("video_from_channels: no channels");
  const Eigen::Index pixels = static_cast<Eigen::Index>(height) * width, frames = channels[0].cols();
  Tensor out({channels.size(), static_cast<std::size_t>(frames), static_cast<std::size_t>(height),
              static_cast<std::size_t>(width)});
  for (std::size_t c = 0; c < channels.size(); ++c) {
    if (channels[c].rows() != pixels || channels[c].cols() != frames) {
      throw ShapeError("video_from_channels: channel matrix has the wrong shape");
    }
    Eigen::Map<RowMajor>(out.ptr() + c * pixels * frames, frames, pixels) = channels[c].transpose();
  }
  return out;
}

Matrix transport_channel(const Tensor& transport, int c) {
  const TransportDims d = transport_dims(transport);
  if (c < 0 || c >= d.channels) throw ShapeError("channel " + std::to_string(c) + " out of range");
  const std::size_t block = static_cast<std::size_t>(d.observed()) * d.hidden();
  return Eigen::Map<const RowMajor>(transport.ptr() + c * block, d.observed(), d.hidden());
}

Tensor transport_from_channels(const std::vector<Matrix>& channels, int obs_height, int obs_width, int hid_height,
                               int hid_width) {
  if (channels.empty()) throw ShapeError("transport_from_channels: no channels");
  const Eigen::Index rows = static_cast<Eigen::Index>(obs_height) * obs_width;
  const Eigen::Index cols = static_cast<Eigen::Index>(hid_height) * hid_width;
  Tensor out({channels.size(), static_cast<std::size_t>(obs_height), static_cast<std::size_t>(obs_width),
              static_cast<std::size_t>(hid_height), static_cast<std::size_t>(hid_width)});
  for (std::size_t c = 0; c < channels.size(); ++c) {
    if (channels[c].rows() != rows || channels[c].cols() != cols) {
      throw ShapeError("transport_from_channels: channel matrix has the wrong shape");
    }
    Eigen::Map<RowMajor>(out.ptr() + c * rows * cols, rows, cols) = channels[c];
  }
  return out;
}

Tensor apply_transport(const Tensor& transport, const Tensor& hidden) {
  const TransportDims td = transport_dims(transport);
  const VideoDims vd = video_dims(hidden);
  if (td.channels != vd.channels || td.hid_height != vd.height || td.hid_width != vd.width) {
    throw ShapeError("transport " + shape_string(transport.shape()) + " does not match hidden video " +
                     shape_string(hidden.shape()));
  }
  std::vector<Matrix> out;
  for (int c = 0; c < td.channels; ++c) out.push_back(transport_channel(transport, c) * video_channel(hidden, c));
  return video_from_channels(out, td.obs_height, td.obs_width);
}

}  // namespace lumen
