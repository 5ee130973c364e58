#include "x2face/editing.hpp"

#include <algorithm>

namespace x2face {

Tensor<float> apply_overlay(const Tensor<float>& embedded, const Tensor<float>& overlay) {
  require(embedded.batch() == 1 && embedded.channels() == 3, ErrorCode::kShapeMismatch,
          "embedded face must be (1, 3, h, w), got " + embedded.shape().str());
  require(overlay.batch() == 1 && overlay.channels() == 4, ErrorCode::kShapeMismatch,
          "overlay must be RGBA (1, 4, h, w), got " + overlay.shape().str());
  require(overlay.height() == embedded.height() && overlay.width() == embedded.width(),
          ErrorCode::kShapeMismatch,
          "overlay is " + std::to_string(overlay.height()) + "x" +
              std::to_string(overlay.width()) + " but the embedded face is " +
              std::to_string(embedded.height()) + "x" + std::to_string(embedded.width()));
  Tensor<float> out = embedded;
  const int hw = embedded.height() * embedded.width();
  const float* alpha = overlay.plane(0, 3);
  for (int c = 0; c < 3; ++c) {
    const float* rgb = overlay.plane(0, c);
    float* o = out.plane(0, c);
    for (int i = 0; i < hw; ++i) {
      const float a = std::clamp(alpha[i], 0.0f, 1.0f);
      // Exact at the endpoints so fully transparent/opaque overlays are no-ops/copies.
      if (a == 0.0f) continue;
      o[i] = a == 1.0f ? rgb[i] : a * rgb[i] + (1.0f - a) * o[i];
    }
  }
  return out;
}

std::vector<FaceFrame> render_edited_sequence(DrivingNetwork<float>& net,
                                              const Tensor<float>& modified,
                                              const std::vector<FaceFrame>& driving,
                                              const SamplerGrid<float>* flow_override) {
  require(!driving.empty(), ErrorCode::kPrecondition, "no driving frames given");
  check_frame(modified, net.config(), "embedded face");
  std::vector<FaceFrame> out;
  out.reserve(driving.size());
  for (const auto& d : driving) {
    check_frame(d, net.config(), "driving frame");
    out.push_back(drive_decode(net, drive_encode(net, d), modified, flow_override).image);
  }
  return out;
}

}  // namespace x2face
