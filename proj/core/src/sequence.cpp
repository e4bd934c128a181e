#include "amda/sequence.hpp"

namespace amda {

FeatureSequence FeatureSequence::make(Tensor values, BoolMask valid,
                                      Modality modality) {
  if (values.rank() != 2) {
    throw DimensionError("FeatureSequence: expected a rank-2 value matrix, got " +
                         shape_string(values.shape()));
  }
  if (valid.size() != values.shape()[0]) {
    throw DimensionError("FeatureSequence: mask length " +
                         std::to_string(valid.size()) + " vs " +
                         std::to_string(values.shape()[0]) + " positions");
  }
  std::size_t n_valid = 0;
  const std::size_t d = values.shape()[1];
  for (std::size_t i = 0; i < valid.size(); ++i) {
    if (valid[i]) {
      ++n_valid;
    } else {
      for (std::size_t j = 0; j < d; ++j) values.values()[i * d + j] = 0.0;
    }
  }
  if (n_valid == 0) {
    throw DegenerateInputError("FeatureSequence: no valid positions");
  }
  return FeatureSequence{std::move(values), std::move(valid), modality};
}

TemporalBoundary make_boundary(std::size_t start, std::size_t end,
                               std::size_t n_frames) {
  if (start > end || end >= n_frames) {
    throw DimensionError("boundary (" + std::to_string(start) + ", " +
                         std::to_string(end) + ") invalid for a " +
                         std::to_string(n_frames) + "-frame video");
  }
  return TemporalBoundary{start, end};
}

} // namespace amda
