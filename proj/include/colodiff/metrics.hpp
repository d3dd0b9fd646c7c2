#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "colodiff/config.hpp"
#include "colodiff/synthdata.hpp"
#include "colodiff/tensor.hpp"

// Generative-quality metrics: Fréchet distances over features of a small
// trained classifier (per-frame features for FID, pooled clip features with
// temporal deltas for the FVD analog) and the Inception Score. Absolute
// values are not comparable to pretrained-backbone numbers; only orderings
// and ratios are asserted anywhere.
namespace colodiff::metrics {

// ---------------------------------------------------------------- features --

struct FeatureExtractor {
    int input_dim = 0;
    int hidden = 64;
    int feat_dim = 32;
    int n_classes = 3;
    Tensor<float> w1{{1, 1}}, b1{{1}};
    Tensor<float> w2{{1, 1}}, b2{{1}};
    Tensor<float> w3{{1, 1}}, b3{{1}};
    double holdout_accuracy = 0.0;

    // frames [N, 3, H, W] (or [N, input_dim]) -> features [N, feat_dim]
    Tensor<float> frame_features(const Tensor<float>& frames) const;
    // frames -> softmax class probabilities [N, n_classes]
    Tensor<float> frame_probs(const Tensor<float>& frames) const;
    // clip [F,3,H,W] -> [2*feat_dim]: mean frame features, mean |delta|
    Tensor<float> clip_features(const Tensor<float>& clip) const;
    // softmax of the frame-mean logits
    Tensor<float> clip_probs(const Tensor<float>& clip) const;
    int classify_clip(const Tensor<float>& clip) const;

    void save(const std::filesystem::path& dir) const;
    static FeatureExtractor load(const std::filesystem::path& dir);
};

// Trains the classifier on a clip-level 80/20 split of the dataset and
// records the held-out frame accuracy. Throws nothing on low accuracy —
// callers gate on holdout_accuracy.
FeatureExtractor train_extractor(const synth::Dataset& ds, const MetricsConfig& mc,
                                 uint64_t seed);

// ----------------------------------------------------------------- frechet --

struct FrechetStats {
    Eigen::VectorXd mu;
    Eigen::MatrixXd sigma;  // unbiased sample covariance
    int64_t n = 0;
};

// features [N, d], N >= 2
FrechetStats fit_gaussian(const Tensor<float>& features);

// Symmetric eigendecomposition square root; negative eigenvalues clamped.
Eigen::MatrixXd matrix_sqrt_psd(const Eigen::MatrixXd& m);

double frechet_distance(const FrechetStats& r, const FrechetStats& g);

// ------------------------------------------------------------------ scores --

// frames [N,3,H,W] per side; requires N >= floor on both sides.
double fid(const Tensor<float>& real_frames, const Tensor<float>& gen_frames,
           const FeatureExtractor& fx, int floor_frames);

double fid_from_features(const Tensor<float>& real_feats, const Tensor<float>& gen_feats);

// clips: vector of [F,3,H,W], all with equal F; requires count >= floor.
double fvd_analog(const std::vector<Tensor<float>>& real_clips,
                  const std::vector<Tensor<float>>& gen_clips, const FeatureExtractor& fx,
                  int floor_clips);

// probs [N, C]; N divisible by splits. Returns (mean, std) over splits.
std::pair<double, double> inception_score_from_probs(const Tensor<float>& probs, int splits);

std::pair<double, double> inception_score(const std::vector<Tensor<float>>& clips,
                                          const FeatureExtractor& fx, int splits);

// Stack every frame of every clip into one [N*F, 3, H, W] tensor.
Tensor<float> stack_frames(const std::vector<Tensor<float>>& clips);

}  // namespace colodiff::metrics
