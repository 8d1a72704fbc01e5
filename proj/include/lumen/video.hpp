#pragma once

#include <vector>

#include "lumen/linalg.hpp"
#include "lumen/tensor.hpp"

namespace lumen {

/// Videos are tensors of shape (C, t, H, W); transport matrices are (C, I, J, i, j).
/// Per channel a video is the (H*W x t) matrix whose columns are frames, and a
/// transport tensor is the (I*J x i*j) matrix mapping hidden to observed pixels.

struct VideoDims {
  int channels = 1, frames = 1, height = 1, width = 1;
};
VideoDims video_dims(const Tensor& video);

struct TransportDims {
  int channels = 1, obs_height = 1, obs_width = 1, hid_height = 1, hid_width = 1;
  int observed() const { return obs_height * obs_width; }
  int hidden() const { return hid_height * hid_width; }
};
TransportDims transport_dims(const Tensor& transport);

Matrix video_channel(const Tensor& video, int c);
Tensor video_from_channels(const std::vector<Matrix>& channels, int height, int width);

Matrix transport_channel(const Tensor& transport, int c);
Tensor transport_from_channels(const std::vector<Matrix>& channels, int obs_height, int obs_width, int hid_height,
                               int hid_width);

/// Z = T L per channel.
Tensor apply_transport(const Tensor& transport, const Tensor& hidden);

}  // namespace lumen
