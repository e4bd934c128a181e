#pragma once

#include <cstddef>
#include <string>

#include "amda/tensor.hpp"

namespace amda {

enum class Modality { visual, textual };

/// A video's frames or a query's tokens: a (length x feature_dim) matrix
/// plus a per-position validity mask. Padding (invalid) rows are zero-filled
/// and must never influence model outputs.
struct FeatureSequence {
  Tensor values;
  BoolMask valid;
  Modality modality = Modality::visual;

  std::size_t length() const { return values.shape()[0]; }
  std::size_t dim() const { return values.shape()[1]; }
  std::size_t num_valid() const {
    std::size_t c = 0;
    for (auto b : valid) c += b ? 1 : 0;
    return c;
  }

  /// Builds a sequence, zero-filling invalid rows and enforcing that at
  /// least one position is valid.
  static FeatureSequence make(Tensor values, BoolMask valid, Modality modality);
};

/// A segment of a video: inclusive 0-based frame indices, so a segment
/// covers end_frame - start_frame + 1 frames.
struct TemporalBoundary {
  std::size_t start_frame = 0;
  std::size_t end_frame = 0;

  bool operator==(const TemporalBoundary&) const = default;
};

/// Validates 0 <= start <= end < n_frames.
TemporalBoundary make_boundary(std::size_t start, std::size_t end,
                               std::size_t n_frames);

} // namespace amda
