#pragma once

#include <vector>

#include "x2face/dataset.hpp"
#include "x2face/networks.hpp"

namespace x2face {

// Straight-alpha composite: out = alpha * rgb + (1 - alpha) * embedded.
// embedded is (1, 3, h, w); overlay is (1, 4, h, w) with alpha in channel 3.
Tensor<float> apply_overlay(const Tensor<float>& embedded, const Tensor<float>& overlay);

// Decodes every driving frame's vector against the (edited) embedded face,
// preserving order.
std::vector<FaceFrame> render_edited_sequence(DrivingNetwork<float>& net,
                                              const Tensor<float>& modified,
                                              const std::vector<FaceFrame>& driving,
                                              const SamplerGrid<float>* flow_override = nullptr);

}  // namespace x2face
