#pragma once

#include <vector>

#include "amda/tensor.hpp"

namespace amda {

/// d -> d -> 1 perceptron with a ReLU between and a sigmoid output.
struct MlpParams {
  Tensor w1, b1, w2, b2;
};

enum class FeatureKind { visual, textual, fused };

/// One discriminator per feature kind, fed through a shared gradient
/// reversal.
struct DiscriminatorParams {
  MlpParams visual, textual, fused;
  double grl_weight = 1.0;
};

/// Masked-video decoder: kernel-3 conv (d -> d), ReLU, kernel-3 conv
/// (d -> raw feature_dim).
struct ReconDecoderParams {
  Tensor k1, b1, k2, b2;
};

/// Domain probability P(target) for one sequence: masked mean pool over
/// valid steps, gradient reversal, the kind's MLP, sigmoid. Shape [1].
Tensor discriminate(const Tensor& feature, FeatureKind kind,
                    const DiscriminatorParams& params, const BoolMask& valid);

/// One (probability, domain-label) pair entering the adversarial loss.
struct DomainTerm {
  Tensor probability; ///< shape [1], from discriminate()
  double label;       ///< 0 = source, 1 = target
};

/// Mean BCE over all (sample, feature-kind) terms.
Tensor adversarial_loss(const std::vector<DomainTerm>& terms);

/// In-batch triplet alignment over pooled target features: for every pair
/// (i, j != i), hinges max(0, margin - l(v_i,q_i) + l(v_j,q_i)) and
/// max(0, margin - l(v_i,q_i) + l(v_i,q_j)), summed and divided by the
/// batch size.
Tensor alignment_loss(const std::vector<Tensor>& video_pooled,
                      const std::vector<Tensor>& query_pooled, double margin);

/// V_recon = Conv1D(ReLU(Conv1D(encoded_masked + fused_masked))).
Tensor reconstruct(const Tensor& encoded_masked, const Tensor& fused_masked,
                   const ReconDecoderParams& params);

/// MSE against the original raw features over valid frames.
Tensor reconstruction_loss(const Tensor& reconstructed, const Tensor& original,
                           const BoolMask& valid);

/// Squared distance of batch means (linear-kernel maximum mean discrepancy).
Tensor mmd_loss(const Tensor& source_pooled, const Tensor& target_pooled);

/// Squared Frobenius distance of batch covariances (1/(B-1) normalization),
/// scaled by 1/(4 d^2).
Tensor coral_loss(const Tensor& source_pooled, const Tensor& target_pooled);

} // namespace amda
